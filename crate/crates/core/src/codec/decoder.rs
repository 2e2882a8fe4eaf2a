//! Huffman-coded JPEG decoding (baseline, extended and progressive) with box
//! chroma upsampling.
//!
//! Each subsampled chroma sample is replicated over the pixels it covers, so
//! a decoded pixel depends only on the coefficients of its own MCU.
//! Interpolating upsamplers blend chroma across MCU edges, which leaks
//! information between neighbouring scrambled blocks and shows up as extra
//! distortion after decryption.

use crate::error::{Error, Result};
use crate::pixelcore::ImageBuffer;

/// Zigzag index -> natural (row-major) index.
const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

fn err(msg: impl Into<String>) -> Error {
    Error::Codec(msg.into())
}

#[derive(Clone, Default)]
struct Huffman {
    // Canonical decoding tables indexed by code length 1..=16.
    maxcode: [i32; 17],
    valptr: [i32; 17],
    mincode: [i32; 17],
    values: Vec<u8>,
}

impl Huffman {
    fn new(counts: &[u8; 16], values: Vec<u8>) -> Result<Self> {
        let total: usize = counts.iter().map(|&c| c as usize).sum();
        if total != values.len() || total > 256 {
            return Err(err("inconsistent Huffman table"));
        }
        let mut h = Huffman { maxcode: [-1; 17], values, ..Default::default() };
        let mut code = 0i32;
        let mut k = 0i32;
        for len in 1..=16 {
            let n = counts[len - 1] as i32;
            if n > 0 {
                h.valptr[len] = k;
                h.mincode[len] = code;
                code += n;
                k += n;
                h.maxcode[len] = code - 1;
            }
            code <<= 1;
        }
        Ok(h)
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u64,
    nbits: u32,
    at_marker: bool,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8], pos: usize) -> Self {
        Self { data, pos, acc: 0, nbits: 0, at_marker: false }
    }

    fn fill(&mut self) {
        while self.nbits <= 56 {
            let mut byte = 0u8;
            if !self.at_marker && self.pos < self.data.len() {
                byte = self.data[self.pos];
                if byte == 0xFF {
                    match self.data.get(self.pos + 1) {
                        Some(0x00) => self.pos += 2,
                        _ => {
                            self.at_marker = true;
                            byte = 0;
                        }
                    }
                } else {
                    self.pos += 1;
                }
            }
            self.acc |= (byte as u64) << (56 - self.nbits);
            self.nbits += 8;
        }
    }

    fn bits(&mut self, n: u32) -> u32 {
        if n == 0 {
            return 0;
        }
        if self.nbits < n {
            self.fill();
        }
        let v = (self.acc >> (64 - n)) as u32;
        self.acc <<= n;
        self.nbits -= n;
        v
    }

    fn bit(&mut self) -> u32 {
        self.bits(1)
    }

    fn decode(&mut self, table: &Huffman) -> Result<u8> {
        let mut code = 0i32;
        for len in 1..=16 {
            code = (code << 1) | self.bit() as i32;
            if code <= table.maxcode[len] {
                let idx = table.valptr[len] + code - table.mincode[len];
                return Ok(table.values[idx as usize]);
            }
        }
        Err(err("invalid Huffman code"))
    }

    /// Reads `s` bits and sign-extends them as a JPEG magnitude category.
    fn receive_extend(&mut self, s: u32) -> i32 {
        if s == 0 {
            return 0;
        }
        let v = self.bits(s) as i32;
        if v < 1 << (s - 1) {
            v - (1 << s) + 1
        } else {
            v
        }
    }

    /// Drops buffered bits and consumes the next RSTn marker.
    fn restart(&mut self) -> Result<()> {
        self.acc = 0;
        self.nbits = 0;
        self.at_marker = false;
        while self.pos + 1 < self.data.len() {
            if self.data[self.pos] == 0xFF && (0xD0..=0xD7).contains(&self.data[self.pos + 1]) {
                self.pos += 2;
                return Ok(());
            }
            self.pos += 1;
        }
        Err(err("missing restart marker"))
    }
}

struct Component {
    id: u8,
    h: usize,
    v: usize,
    quant: usize,
    blocks_w: usize,
    blocks_h: usize,
    coefs: Vec<i32>,
    dc_pred: i32,
    dc_table: usize,
    ac_table: usize,
}

struct Frame {
    width: usize,
    height: usize,
    progressive: bool,
    hmax: usize,
    vmax: usize,
    mcux: usize,
    mcuy: usize,
    components: Vec<Component>,
}

impl Frame {
    // Blocks that carry image data for a component (non-interleaved scan extent).
    fn scan_blocks(&self, c: &Component) -> (usize, usize) {
        let w = (self.width * c.h).div_ceil(self.hmax);
        let h = (self.height * c.v).div_ceil(self.vmax);
        (w.div_ceil(8), h.div_ceil(8))
    }
}

struct Scan {
    comps: Vec<usize>,
    ss: usize,
    se: usize,
    ah: u32,
    al: u32,
}

struct Decoder {
    quant: [[u16; 64]; 4],
    dc_tables: [Huffman; 4],
    ac_tables: [Huffman; 4],
    restart_interval: usize,
    adobe_transform: Option<u8>,
    frame: Option<Frame>,
    eobrun: u32,
}

impl Default for Decoder {
    fn default() -> Self {
        Self {
            quant: [[0; 64]; 4],
            dc_tables: Default::default(),
            ac_tables: Default::default(),
            restart_interval: 0,
            adobe_transform: None,
            frame: None,
            eobrun: 0,
        }
    }
}

fn u16_at(data: &[u8], pos: usize) -> Result<usize> {
    match data.get(pos..pos + 2) {
        Some(b) => Ok(u16::from_be_bytes([b[0], b[1]]) as usize),
        None => Err(err("unexpected end of data")),
    }
}

/// Position of the first marker at or after `pos` that is not a restart marker.
fn next_marker(data: &[u8], mut pos: usize) -> Option<usize> {
    while pos + 1 < data.len() {
        if data[pos] == 0xFF {
            let m = data[pos + 1];
            if m != 0x00 && m != 0xFF && !(0xD0..=0xD7).contains(&m) {
                return Some(pos);
            }
        }
        pos += 1;
    }
    None
}

/// Decodes a JPEG stream to an 8-bit luma or RGB raster.
pub fn decode(data: &[u8]) -> Result<ImageBuffer> {
    if data.get(0..2) != Some(&[0xFF, 0xD8]) {
        return Err(err("missing SOI marker"));
    }
    let mut dec = Decoder::default();
    let mut pos = 2;
    loop {
        pos = next_marker(data, pos).ok_or_else(|| err("missing EOI marker"))?;
        let marker = data[pos + 1];
        pos += 2;
        match marker {
            0xD9 => break,
            0xD8 => return Err(err("nested SOI")),
            _ => {}
        }
        let len = u16_at(data, pos)?;
        let seg = data
            .get(pos + 2..pos + len)
            .ok_or_else(|| err("truncated segment"))?;
        match marker {
            0xDB => dec.read_dqt(seg)?,
            0xC4 => dec.read_dht(seg)?,
            0xDD => {
                dec.restart_interval = u16_at(seg, 0)?;
            }
            0xC0..=0xC2 => dec.read_sof(seg, marker == 0xC2)?,
            0xC3 | 0xC5..=0xC7 | 0xC9..=0xCB | 0xCD..=0xCF => {
                return Err(err("lossless, hierarchical and arithmetic-coded JPEG are not supported"))
            }
            0xEE => {
                if seg.len() >= 12 && &seg[..5] == b"Adobe" {
                    dec.adobe_transform = Some(seg[11]);
                }
            }
            0xDA => {
                let scan = dec.read_sos(seg)?;
                let start = pos + len;
                dec.decode_scan(data, start, &scan)?;
                pos = start;
                continue;
            }
            _ => {}
        }
        pos += len;
    }
    dec.finish()
}

impl Decoder {
    fn read_dqt(&mut self, mut seg: &[u8]) -> Result<()> {
        while !seg.is_empty() {
            let (precision, id) = ((seg[0] >> 4) as usize, (seg[0] & 15) as usize);
            if id > 3 {
                return Err(err("quantization table id out of range"));
            }
            let size = if precision == 0 { 64 } else { 128 };
            let body = seg.get(1..1 + size).ok_or_else(|| err("truncated DQT"))?;
            for k in 0..64 {
                self.quant[id][ZIGZAG[k]] = if precision == 0 {
                    body[k] as u16
                } else {
                    u16::from_be_bytes([body[2 * k], body[2 * k + 1]])
                };
            }
            seg = &seg[1 + size..];
        }
        Ok(())
    }

    fn read_dht(&mut self, mut seg: &[u8]) -> Result<()> {
        while !seg.is_empty() {
            let (class, id) = (seg[0] >> 4, (seg[0] & 15) as usize);
            if id > 3 || class > 1 {
                return Err(err("Huffman table id out of range"));
            }
            let counts: [u8; 16] = seg
                .get(1..17)
                .ok_or_else(|| err("truncated DHT"))?
                .try_into()
                .expect("16 bytes");
            let total: usize = counts.iter().map(|&c| c as usize).sum();
            let values = seg.get(17..17 + total).ok_or_else(|| err("truncated DHT"))?.to_vec();
            let table = Huffman::new(&counts, values)?;
            if class == 0 {
                self.dc_tables[id] = table;
            } else {
                self.ac_tables[id] = table;
            }
            seg = &seg[17 + total..];
        }
        Ok(())
    }

    fn read_sof(&mut self, seg: &[u8], progressive: bool) -> Result<()> {
        if self.frame.is_some() {
            return Err(err("multiple frames"));
        }
        if seg.len() < 6 || seg[0] != 8 {
            return Err(err("only 8-bit samples are supported"));
        }
        let height = u16_at(seg, 1)?;
        let width = u16_at(seg, 3)?;
        let n = seg[5] as usize;
        if width == 0 || height == 0 {
            return Err(err("zero-sized or DNL-defined frames are not supported"));
        }
        if n != 1 && n != 3 {
            return Err(err(format!("{n}-component images are not supported")));
        }
        let spec = seg.get(6..6 + 3 * n).ok_or_else(|| err("truncated SOF"))?;
        let mut components: Vec<Component> = spec
            .chunks_exact(3)
            .map(|c| Component {
                id: c[0],
                h: (c[1] >> 4) as usize,
                v: (c[1] & 15) as usize,
                quant: (c[2] & 3) as usize,
                blocks_w: 0,
                blocks_h: 0,
                coefs: Vec::new(),
                dc_pred: 0,
                dc_table: 0,
                ac_table: 0,
            })
            .collect();
        if components.iter().any(|c| !(1..=4).contains(&c.h) || !(1..=4).contains(&c.v)) {
            return Err(err("invalid sampling factors"));
        }
        let hmax = components.iter().map(|c| c.h).max().expect("non-empty");
        let vmax = components.iter().map(|c| c.v).max().expect("non-empty");
        if components.iter().any(|c| hmax % c.h != 0 || vmax % c.v != 0) {
            return Err(err("non-integral sampling ratios are not supported"));
        }
        let mcux = width.div_ceil(8 * hmax);
        let mcuy = height.div_ceil(8 * vmax);
        for c in &mut components {
            c.blocks_w = mcux * c.h;
            c.blocks_h = mcuy * c.v;
            c.coefs = vec![0; c.blocks_w * c.blocks_h * 64];
        }
        self.frame = Some(Frame { width, height, progressive, hmax, vmax, mcux, mcuy, components });
        Ok(())
    }

    fn read_sos(&mut self, seg: &[u8]) -> Result<Scan> {
        let frame = self.frame.as_mut().ok_or_else(|| err("scan before frame header"))?;
        let n = *seg.first().ok_or_else(|| err("empty SOS"))? as usize;
        let spec = seg.get(1..1 + 2 * n).ok_or_else(|| err("truncated SOS"))?;
        let tail = seg.get(1 + 2 * n..4 + 2 * n).ok_or_else(|| err("truncated SOS"))?;
        let mut comps = Vec::with_capacity(n);
        for pair in spec.chunks_exact(2) {
            let idx = frame
                .components
                .iter()
                .position(|c| c.id == pair[0])
                .ok_or_else(|| err("scan references an unknown component"))?;
            frame.components[idx].dc_table = (pair[1] >> 4) as usize & 3;
            frame.components[idx].ac_table = (pair[1] & 15) as usize & 3;
            comps.push(idx);
        }
        let scan = Scan {
            comps,
            ss: tail[0] as usize,
            se: tail[1] as usize,
            ah: (tail[2] >> 4) as u32,
            al: (tail[2] & 15) as u32,
        };
        if scan.se > 63 || scan.ss > scan.se {
            return Err(err("invalid spectral selection"));
        }
        if frame.progressive && scan.ss > 0 && scan.comps.len() != 1 {
            return Err(err("progressive AC scans must contain one component"));
        }
        if !frame.progressive && (scan.ss != 0 || scan.se != 63 || scan.ah != 0 || scan.al != 0) {
            return Err(err("invalid sequential scan parameters"));
        }
        Ok(scan)
    }

    fn decode_scan(&mut self, data: &[u8], start: usize, scan: &Scan) -> Result<()> {
        let mut frame = self.frame.take().ok_or_else(|| err("scan before frame header"))?;
        let result = self.decode_scan_into(&mut frame, data, start, scan);
        self.frame = Some(frame);
        result
    }

    fn decode_scan_into(&mut self, frame: &mut Frame, data: &[u8], start: usize, scan: &Scan) -> Result<()> {
        let mut reader = BitReader::new(data, start);
        for &ci in &scan.comps {
            frame.components[ci].dc_pred = 0;
        }
        self.eobrun = 0;

        // (component index, block column, block row) in coding order, one MCU at a time.
        let mut units: Vec<Vec<(usize, usize, usize)>> = Vec::new();
        if scan.comps.len() == 1 {
            let ci = scan.comps[0];
            let (bw, bh) = frame.scan_blocks(&frame.components[ci]);
            for by in 0..bh {
                for bx in 0..bw {
                    units.push(vec![(ci, bx, by)]);
                }
            }
        } else {
            for my in 0..frame.mcuy {
                for mx in 0..frame.mcux {
                    let mut mcu = Vec::new();
                    for &ci in &scan.comps {
                        let c = &frame.components[ci];
                        for v in 0..c.v {
                            for h in 0..c.h {
                                mcu.push((ci, mx * c.h + h, my * c.v + v));
                            }
                        }
                    }
                    units.push(mcu);
                }
            }
        }

        for (n, mcu) in units.iter().enumerate() {
            if self.restart_interval > 0 && n > 0 && n % self.restart_interval == 0 {
                reader.restart()?;
                for &ci in &scan.comps {
                    frame.components[ci].dc_pred = 0;
                }
                self.eobrun = 0;
            }
            for &(ci, bx, by) in mcu {
                let comp = &mut frame.components[ci];
                let offset = (by * comp.blocks_w + bx) * 64;
                let block: &mut [i32; 64] =
                    (&mut comp.coefs[offset..offset + 64]).try_into().expect("64 coefficients");
                let dc = &self.dc_tables[comp.dc_table];
                let ac = &self.ac_tables[comp.ac_table];
                if !frame.progressive {
                    decode_dc_first(&mut reader, dc, &mut comp.dc_pred, block, 0)?;
                    decode_ac_first(&mut reader, ac, block, 1, 63, 0, &mut self.eobrun)?;
                } else if scan.ss == 0 {
                    if scan.ah == 0 {
                        decode_dc_first(&mut reader, dc, &mut comp.dc_pred, block, scan.al)?;
                    } else if reader.bit() == 1 {
                        block[0] |= 1 << scan.al;
                    }
                } else if scan.ah == 0 {
                    decode_ac_first(&mut reader, ac, block, scan.ss, scan.se, scan.al, &mut self.eobrun)?;
                } else {
                    decode_ac_refine(&mut reader, ac, block, scan.ss, scan.se, scan.al, &mut self.eobrun)?;
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<ImageBuffer> {
        let frame = self.frame.ok_or_else(|| err("no frame"))?;
        let planes: Vec<Vec<u8>> = frame
            .components
            .iter()
            .map(|c| reconstruct_plane(c, &self.quant[c.quant]))
            .collect();
        let (w, h) = (frame.width, frame.height);
        let sample = |ci: usize, x: usize, y: usize| -> u8 {
            let c = &frame.components[ci];
            let sx = x * c.h / frame.hmax;
            let sy = y * c.v / frame.vmax;
            planes[ci][sy * c.blocks_w * 8 + sx]
        };
        if frame.components.len() == 1 {
            return ImageBuffer::from_fn(w, h, 1, |x, y, _| sample(0, x, y));
        }
        let ycc = self.adobe_transform != Some(0);
        let mut out = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let (a, b, c) = (sample(0, x, y), sample(1, x, y), sample(2, x, y));
                if ycc {
                    out.extend_from_slice(&ycbcr_to_rgb(a, b, c));
                } else {
                    out.extend_from_slice(&[a, b, c]);
                }
            }
        }
        ImageBuffer::new(w, h, 3, out)
    }
}

fn decode_dc_first(
    reader: &mut BitReader,
    table: &Huffman,
    pred: &mut i32,
    block: &mut [i32; 64],
    al: u32,
) -> Result<()> {
    let s = reader.decode(table)? as u32;
    if s > 11 {
        return Err(err("DC magnitude category out of range"));
    }
    *pred += reader.receive_extend(s);
    block[0] = *pred << al;
    Ok(())
}

fn decode_ac_first(
    reader: &mut BitReader,
    table: &Huffman,
    block: &mut [i32; 64],
    ss: usize,
    se: usize,
    al: u32,
    eobrun: &mut u32,
) -> Result<()> {
    if *eobrun > 0 {
        *eobrun -= 1;
        return Ok(());
    }
    let mut k = ss;
    while k <= se {
        let rs = reader.decode(table)?;
        let (r, s) = ((rs >> 4) as u32, (rs & 15) as u32);
        if s == 0 {
            if r < 15 {
                *eobrun = (1 << r) - 1 + reader.bits(r);
                break;
            }
            k += 16;
        } else {
            k += r as usize;
            if k > se {
                return Err(err("AC coefficient index out of range"));
            }
            block[ZIGZAG[k]] = reader.receive_extend(s) << al;
            k += 1;
        }
    }
    Ok(())
}

fn decode_ac_refine(
    reader: &mut BitReader,
    table: &Huffman,
    block: &mut [i32; 64],
    ss: usize,
    se: usize,
    al: u32,
    eobrun: &mut u32,
) -> Result<()> {
    let p1 = 1i32 << al;
    let m1 = -1i32 << al;
    let refine = |reader: &mut BitReader, coef: &mut i32| {
        if reader.bit() == 1 && *coef & p1 == 0 {
            *coef += if *coef >= 0 { p1 } else { m1 };
        }
    };
    let mut k = ss;
    if *eobrun == 0 {
        while k <= se {
            let rs = reader.decode(table)?;
            let (mut r, s) = ((rs >> 4) as i32, rs & 15);
            let mut value = 0;
            if s != 0 {
                if s != 1 {
                    return Err(err("bad refinement magnitude"));
                }
                value = if reader.bit() == 1 { p1 } else { m1 };
            } else if r != 15 {
                *eobrun = (1 << r) + reader.bits(r as u32);
                break;
            }
            while k <= se {
                let z = ZIGZAG[k];
                if block[z] != 0 {
                    refine(reader, &mut block[z]);
                } else {
                    if r == 0 {
                        break;
                    }
                    r -= 1;
                }
                k += 1;
            }
            if value != 0 {
                if k > se {
                    return Err(err("AC coefficient index out of range"));
                }
                block[ZIGZAG[k]] = value;
            }
            k += 1;
        }
    }
    if *eobrun > 0 {
        while k <= se {
            let z = ZIGZAG[k];
            if block[z] != 0 {
                refine(reader, &mut block[z]);
            }
            k += 1;
        }
        *eobrun -= 1;
    }
    Ok(())
}

fn idct_table() -> [[f32; 8]; 8] {
    let mut t = [[0f32; 8]; 8];
    for (x, row) in t.iter_mut().enumerate() {
        for (u, v) in row.iter_mut().enumerate() {
            let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            *v = (cu / 2.0 * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos()) as f32;
        }
    }
    t
}

fn reconstruct_plane(c: &Component, quant: &[u16; 64]) -> Vec<u8> {
    let table = idct_table();
    let stride = c.blocks_w * 8;
    let mut plane = vec![0u8; stride * c.blocks_h * 8];
    let mut coef = [0f32; 64];
    let mut tmp = [0f32; 64];
    for by in 0..c.blocks_h {
        for bx in 0..c.blocks_w {
            let offset = (by * c.blocks_w + bx) * 64;
            for (i, v) in coef.iter_mut().enumerate() {
                *v = (c.coefs[offset + i] * quant[i] as i32) as f32;
            }
            // Rows: tmp[v][x] = sum_u T[x][u] F[v][u]
            for v in 0..8 {
                for x in 0..8 {
                    tmp[v * 8 + x] = (0..8).map(|u| table[x][u] * coef[v * 8 + u]).sum();
                }
            }
            for y in 0..8 {
                for x in 0..8 {
                    let s: f32 = (0..8).map(|v| table[y][v] * tmp[v * 8 + x]).sum();
                    let px = (s + 128.0).round().clamp(0.0, 255.0) as u8;
                    plane[(by * 8 + y) * stride + bx * 8 + x] = px;
                }
            }
        }
    }
    plane
}

fn ycbcr_to_rgb(y: u8, cb: u8, cr: u8) -> [u8; 3] {
    let (y, cb, cr) = (y as f32, cb as f32 - 128.0, cr as f32 - 128.0);
    let clamp = |v: f32| v.round().clamp(0.0, 255.0) as u8;
    [
        clamp(y + 1.402 * cr),
        clamp(y - 0.344_136 * cb - 0.714_136 * cr),
        clamp(y + 1.772 * cb),
    ]
}
