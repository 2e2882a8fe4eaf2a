//! 8-bit raster images, binary Netpbm I/O, block partitioning and PSNR.

use crate::error::{Error, Result};

/// Row-major, channel-interleaved 8-bit image with 1 or 3 channels.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("empty image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Dimension(format!("unsupported channel count {channels}")));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// Decodes a binary PGM (`P5`) or PPM (`P6`) file with maxval 255.
pub fn load_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut pos = 0;
    let magic = bytes.get(0..2).ok_or_else(|| Error::Header("missing magic".into()))?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::Header("expected P5 or P6 magic".into())),
    };
    pos += 2;

    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        skip_whitespace_and_comments(bytes, &mut pos);
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Header(format!("expected a decimal number at byte {start}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::Header(format!("number out of range: {text}")))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Header("missing whitespace after maxval".into())),
    }

    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::MaxVal(maxval));
    }
    let (width, height) = (width as usize, height as usize);
    if width == 0 || height == 0 {
        return Err(Error::Header(format!("empty image {width}x{height}")));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Header("image dimensions overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::Truncated { expected, found: payload.len() });
    }
    ImageBuffer::new(width, height, channels, payload[..expected].to_vec())
}

fn skip_whitespace_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

/// Encodes `img` in canonical form: `P5`/`P6`, `\n`, `"width height"`, `\n`, `255`, `\n`, raw samples.
pub fn save_ppm(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let header = format!("{magic}\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&img.data);
    out
}

/// Tiling of an image into square blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockGrid {
    pub block_size: usize,
    pub rows: usize,
    pub cols: usize,
}

impl BlockGrid {
    pub fn for_dimensions(width: usize, height: usize, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::Dimension("block size must be positive".into()));
        }
        if width == 0 || height == 0 || !width.is_multiple_of(block_size) || !height.is_multiple_of(block_size) {
            return Err(Error::Dimension(format!(
                "{width}x{height} is not divisible into {block_size}x{block_size} blocks"
            )));
        }
        Ok(Self { block_size, rows: height / block_size, cols: width / block_size })
    }

    pub fn for_image(img: &ImageBuffer, block_size: usize) -> Result<Self> {
        Self::for_dimensions(img.width, img.height, block_size)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.cols * self.block_size
    }

    pub fn height(&self) -> usize {
        self.rows * self.block_size
    }
}

/// A square `size`×`size` tile with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Block {
    pub size: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Block {
    pub fn new(size: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != size * size * channels {
            return Err(Error::Shape(format!(
                "block data length {} does not match {size}x{size}x{channels}",
                data.len()
            )));
        }
        Ok(Self { size, channels, data })
    }

    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.size + x) * self.channels + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.size + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

/// Cuts `img` into blocks listed in raster order of their grid position.
pub fn split_blocks(img: &ImageBuffer, block_size: usize) -> Result<(Vec<Block>, BlockGrid)> {
    let grid = BlockGrid::for_image(img, block_size)?;
    let ch = img.channels;
    let row_len = block_size * ch;
    let mut blocks = Vec::with_capacity(grid.len());
    for br in 0..grid.rows {
        for bc in 0..grid.cols {
            let mut data = Vec::with_capacity(block_size * row_len);
            for y in 0..block_size {
                let start = ((br * block_size + y) * img.width + bc * block_size) * ch;
                data.extend_from_slice(&img.data[start..start + row_len]);
            }
            blocks.push(Block { size: block_size, channels: ch, data });
        }
    }
    Ok((blocks, grid))
}

/// Inverse of [`split_blocks`].
pub fn merge_blocks(blocks: &[Block], grid: BlockGrid, channels: usize) -> Result<ImageBuffer> {
    if blocks.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{} blocks supplied for a {}x{} grid",
            blocks.len(),
            grid.rows,
            grid.cols
        )));
    }
    let bs = grid.block_size;
    if let Some(bad) = blocks.iter().find(|b| b.size != bs || b.channels != channels) {
        return Err(Error::Shape(format!(
            "block {}x{}x{} does not match {bs}x{bs}x{channels}",
            bad.size, bad.size, bad.channels
        )));
    }
    let width = grid.width();
    let mut data = vec![0u8; width * grid.height() * channels];
    let row_len = bs * channels;
    for (i, block) in blocks.iter().enumerate() {
        let (br, bc) = (i / grid.cols, i % grid.cols);
        for y in 0..bs {
            let dst = ((br * bs + y) * width + bc * bs) * channels;
            data[dst..dst + row_len].copy_from_slice(&block.data[y * row_len..(y + 1) * row_len]);
        }
    }
    ImageBuffer::new(width, grid.height(), channels, data)
}

/// Peak signal-to-noise ratio in dB over all samples jointly; `f64::INFINITY` when identical.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "cannot compare {}x{}x{} with {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    let sse: u64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse as f64 / a.data.len() as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

/// Extends `img` to the next multiple of `multiple` in both directions by
/// replicating the last column and row. Returns the padded image and the
/// added (right, bottom) amounts.
pub fn pad_edge(img: &ImageBuffer, multiple: usize) -> Result<(ImageBuffer, usize, usize)> {
    if multiple == 0 {
        return Err(Error::Dimension("padding multiple must be positive".into()));
    }
    let pad_r = (multiple - img.width % multiple) % multiple;
    let pad_b = (multiple - img.height % multiple) % multiple;
    if pad_r == 0 && pad_b == 0 {
        return Ok((img.clone(), 0, 0));
    }
    let (w, h) = (img.width, img.height);
    let padded = ImageBuffer::from_fn(w + pad_r, h + pad_b, img.channels, |x, y, c| {
        img.sample(x.min(w - 1), y.min(h - 1), c)
    })?;
    Ok((padded, pad_r, pad_b))
}

/// Keeps the top-left `width`×`height` region.
pub fn crop(img: &ImageBuffer, width: usize, height: usize) -> Result<ImageBuffer> {
    if width > img.width || height > img.height {
        return Err(Error::Dimension(format!(
            "cannot crop {}x{} to {width}x{height}",
            img.width, img.height
        )));
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let ch = img.channels;
    let mut data = Vec::with_capacity(width * height * ch);
    for y in 0..height {
        let start = y * img.width * ch;
        data.extend_from_slice(&img.data[start..start + width * ch]);
    }
    ImageBuffer::new(width, height, ch, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_image() -> impl Strategy<Value = ImageBuffer> {
        (1usize..6, 1usize..6, prop::sample::select(vec![1usize, 3])).prop_flat_map(|(w, h, c)| {
            prop::collection::vec(any::<u8>(), w * h * c)
                .prop_map(move |data| ImageBuffer::new(w, h, c, data).unwrap())
        })
    }

    #[test]
    fn loads_minimal_pgm() {
        let img = load_ppm(b"P5\n1 1\n255\n\x00").unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (1, 1, 1));
        assert_eq!(img.data(), &[0]);
    }

    #[test]
    fn loads_rgb_pair() {
        let img = load_ppm(b"P6 2 1 255\n\xff\x00\x00\x00\xff\x00").unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 1, 3));
        assert_eq!(img.data(), &[255, 0, 0, 0, 255, 0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = load_ppm(b"P5\n# made by hand\n2 1\n# another\n255\n\x01\x02").unwrap();
        assert_eq!(img.data(), &[1, 2]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(load_ppm(b"P3\n1 1\n255\n0"), Err(Error::Header(_))));
        assert!(matches!(load_ppm(b"P5\n1 1\n65535\n\x00\x00"), Err(Error::MaxVal(65535))));
        assert!(matches!(
            load_ppm(b"P6\n2 2\n255\n\x00\x00"),
            Err(Error::Truncated { expected: 12, found: 2 })
        ));
        assert!(matches!(load_ppm(b"P5\n1\n"), Err(Error::Header(_))));
        assert!(matches!(load_ppm(b"P5\n0 1\n255\n"), Err(Error::Header(_))));
        assert!(matches!(load_ppm(b""), Err(Error::Header(_))));
    }

    #[test]
    fn canonical_save() {
        let img = ImageBuffer::new(1, 1, 1, vec![7]).unwrap();
        assert_eq!(save_ppm(&img), b"P5\n1 1\n255\n\x07".to_vec());
        let rgb = ImageBuffer::from_fn(2, 2, 3, |x, y, c| (x * 31 + y * 7 + c) as u8).unwrap();
        let bytes = save_ppm(&rgb);
        assert_eq!(bytes.len() - b"P6\n2 2\n255\n".len(), 12);
        assert_eq!(load_ppm(&bytes).unwrap(), rgb);
    }

    #[test]
    fn split_single_block_and_halves() {
        let img = ImageBuffer::from_fn(16, 16, 3, |x, y, c| (x + 16 * y + c) as u8).unwrap();
        let (blocks, grid) = split_blocks(&img, 16).unwrap();
        assert_eq!(grid, BlockGrid { block_size: 16, rows: 1, cols: 1 });
        assert_eq!(blocks[0].data, img.data());

        let img = ImageBuffer::from_fn(32, 16, 1, |x, _, _| if x < 16 { 1 } else { 2 }).unwrap();
        let (blocks, grid) = split_blocks(&img, 16).unwrap();
        assert_eq!((grid.rows, grid.cols), (1, 2));
        assert!(blocks[0].data.iter().all(|&v| v == 1));
        assert!(blocks[1].data.iter().all(|&v| v == 2));
    }

    #[test]
    fn split_rejects_non_divisible() {
        let img = ImageBuffer::filled(17, 16, 1, 0).unwrap();
        assert!(matches!(split_blocks(&img, 16), Err(Error::Dimension(_))));
    }

    #[test]
    fn merge_checks_shapes() {
        let img = ImageBuffer::filled(8, 8, 1, 3).unwrap();
        let (blocks, grid) = split_blocks(&img, 4).unwrap();
        assert!(matches!(merge_blocks(&blocks[..3], grid, 1), Err(Error::Shape(_))));
        assert!(matches!(merge_blocks(&blocks, grid, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn merge_respects_raster_order() {
        let img = ImageBuffer::from_fn(8, 8, 1, |x, y, _| (x / 4 + 2 * (y / 4)) as u8).unwrap();
        let (mut blocks, grid) = split_blocks(&img, 4).unwrap();
        blocks.swap(0, 3);
        let merged = merge_blocks(&blocks, grid, 1).unwrap();
        let (again, _) = split_blocks(&merged, 4).unwrap();
        assert_eq!(again, blocks);
        assert_eq!(merged.sample(0, 0, 0), 3);
    }

    #[test]
    fn psnr_reference_values() {
        let a = ImageBuffer::filled(4, 4, 3, 0).unwrap();
        let b = ImageBuffer::filled(4, 4, 3, 255).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b).unwrap().abs() < 1e-12);

        let x = ImageBuffer::new(1, 1, 1, vec![100]).unwrap();
        let y = ImageBuffer::new(1, 1, 1, vec![116]).unwrap();
        let expected = 10.0 * (255.0f64 * 255.0 / 256.0).log10();
        assert!((psnr(&x, &y).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 24.05).abs() < 0.01);

        assert!(matches!(psnr(&a, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn pad_and_crop() {
        let img = ImageBuffer::from_fn(5, 3, 1, |x, y, _| (10 * y + x) as u8).unwrap();
        let (padded, r, b) = pad_edge(&img, 4).unwrap();
        assert_eq!((padded.width(), padded.height(), r, b), (8, 4, 3, 1));
        assert_eq!(padded.sample(7, 3, 0), img.sample(4, 2, 0));
        assert_eq!(padded.sample(2, 3, 0), img.sample(2, 2, 0));
        assert_eq!(crop(&padded, 5, 3).unwrap(), img);
        assert!(crop(&img, 6, 3).is_err());
    }

    proptest! {
        #[test]
        fn ppm_roundtrip(img in arb_image()) {
            let bytes = save_ppm(&img);
            let loaded = load_ppm(&bytes).unwrap();
            prop_assert_eq!(&loaded, &img);
            prop_assert_eq!(save_ppm(&loaded), bytes);
        }

        #[test]
        fn split_merge_identity(
            (bs, rows, cols, ch) in (1usize..6, 1usize..5, 1usize..5, prop::sample::select(vec![1usize, 3])),
            seed in any::<u64>(),
        ) {
            let mut s = seed;
            let img = ImageBuffer::from_fn(cols * bs, rows * bs, ch, |_, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 56) as u8
            }).unwrap();
            let (blocks, grid) = split_blocks(&img, bs).unwrap();
            prop_assert_eq!(blocks.len(), rows * cols);
            prop_assert_eq!(merge_blocks(&blocks, grid, ch).unwrap(), img);
        }

        #[test]
        fn psnr_symmetric(a in arb_image(), seed in any::<u8>()) {
            let b = ImageBuffer::new(
                a.width(), a.height(), a.channels(),
                a.data().iter().map(|v| v.wrapping_add(seed)).collect(),
            ).unwrap();
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            prop_assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        }
    }
}
