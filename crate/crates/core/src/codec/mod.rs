//! JPEG round trips for encrypted and plain pipelines.
//!
//! Codecs sit behind [`JpegCodec`]. The built-in adapter (feature `jpeg`)
//! uses `jpeg-encoder` for baseline or progressive encoding and the in-crate
//! [`decoder`], whose box chroma upsampling keeps every decoded pixel inside
//! its own MCU.

use std::fmt;
use std::str::FromStr;

use crate::cipher::{decrypt, encrypt_padded, CipherConfig};
use crate::error::{Error, Result};
use crate::keyschedule::MasterKey;
use crate::pixelcore::{psnr, ImageBuffer};

pub mod decoder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subsampling {
    /// 4:2:0, 16×16 MCU.
    S420,
    /// 4:4:4, 8×8 MCU.
    S444,
}

impl fmt::Display for Subsampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subsampling::S420 => "420",
            Subsampling::S444 => "444",
        })
    }
}

impl FromStr for Subsampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "420" | "4:2:0" => Ok(Subsampling::S420),
            "444" | "4:4:4" => Ok(Subsampling::S444),
            _ => Err(Error::Invalid(format!("unknown subsampling {s:?} (use 420 or 444)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodecParams {
    quality: u8,
    pub subsampling: Subsampling,
    pub progressive: bool,
}

impl CodecParams {
    pub fn new(quality: u8, subsampling: Subsampling) -> Result<Self> {
        if !(1..=100).contains(&quality) {
            return Err(Error::Invalid(format!("JPEG quality {quality} is not in 1..=100")));
        }
        Ok(Self { quality, subsampling, progressive: false })
    }

    pub fn quality(&self) -> u8 {
        self.quality
    }

    pub fn with_quality(self, quality: u8) -> Result<Self> {
        let mut p = Self::new(quality, self.subsampling)?;
        p.progressive = self.progressive;
        Ok(p)
    }

    pub fn progressive(mut self, on: bool) -> Self {
        self.progressive = on;
        self
    }
}

/// A deterministic JPEG encoder/decoder pair.
pub trait JpegCodec: Send + Sync {
    fn encode(&self, img: &ImageBuffer, params: &CodecParams) -> Result<Vec<u8>>;
    fn decode(&self, bytes: &[u8]) -> Result<ImageBuffer>;
}

#[cfg(feature = "jpeg")]
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinJpeg;

#[cfg(feature = "jpeg")]
impl JpegCodec for BuiltinJpeg {
    fn encode(&self, img: &ImageBuffer, params: &CodecParams) -> Result<Vec<u8>> {
        use jpeg_encoder::{ColorType, Encoder, SamplingFactor};

        let dim = |v: usize| {
            u16::try_from(v).map_err(|_| Error::Codec(format!("dimension {v} exceeds the JPEG limit")))
        };
        let (w, h) = (dim(img.width())?, dim(img.height())?);
        let mut out = Vec::new();
        let mut encoder = Encoder::new(&mut out, params.quality);
        encoder.set_sampling_factor(match params.subsampling {
            Subsampling::S420 => SamplingFactor::R_4_2_0,
            Subsampling::S444 => SamplingFactor::R_4_4_4,
        });
        encoder.set_progressive(params.progressive);
        let color = if img.channels() == 1 { ColorType::Luma } else { ColorType::Rgb };
        encoder
            .encode(img.data(), w, h, color)
            .map_err(|e| Error::Codec(e.to_string()))?;
        Ok(out)
    }

    fn decode(&self, bytes: &[u8]) -> Result<ImageBuffer> {
        decoder::decode(bytes)
    }
}

/// The codec compiled into this build.
pub fn default_codec() -> Result<&'static dyn JpegCodec> {
    #[cfg(feature = "jpeg")]
    {
        Ok(&BuiltinJpeg)
    }
    #[cfg(not(feature = "jpeg"))]
    {
        Err(Error::CodecUnavailable)
    }
}

/// Encodes and decodes `img`; returns the decoded raster and the compressed size in bytes.
pub fn jpeg_roundtrip(
    codec: &dyn JpegCodec,
    img: &ImageBuffer,
    params: &CodecParams,
) -> Result<(ImageBuffer, usize)> {
    let bytes = codec.encode(img, params)?;
    let decoded = codec.decode(&bytes)?;
    if !decoded.same_shape(img) {
        return Err(Error::Codec(format!(
            "decoded {}x{}x{} from a {}x{}x{} input",
            decoded.width(),
            decoded.height(),
            decoded.channels(),
            img.width(),
            img.height(),
            img.channels()
        )));
    }
    Ok((decoded, bytes.len()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    pub quality: u8,
    /// Compressed bits per pixel of the original image.
    pub bits_per_pixel: f64,
    /// PSNR of the end-to-end reconstruction against the original plaintext.
    pub psnr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdCurves {
    pub plain: Vec<RdPoint>,
    pub encrypted: Vec<RdPoint>,
}

impl RdCurves {
    /// Mean of `plain.psnr - encrypted.psnr` over qualities.
    pub fn mean_psnr_gap(&self) -> f64 {
        let gaps: Vec<f64> =
            self.plain.iter().zip(&self.encrypted).map(|(p, e)| p.psnr_db - e.psnr_db).collect();
        gaps.iter().sum::<f64>() / gaps.len() as f64
    }

    /// Mean relative bitrate increase of the encrypted path.
    pub fn mean_bpp_inflation(&self) -> f64 {
        let ratios: Vec<f64> = self
            .plain
            .iter()
            .zip(&self.encrypted)
            .map(|(p, e)| e.bits_per_pixel / p.bits_per_pixel - 1.0)
            .collect();
        ratios.iter().sum::<f64>() / ratios.len() as f64
    }

    /// CSV with header `path,quality,bpp,psnr_db` and 6-decimal fixed values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,quality,bpp,psnr_db\n");
        for (path, points) in [("plain", &self.plain), ("encrypted", &self.encrypted)] {
            for p in points {
                out.push_str(&format!(
                    "{path},{},{:.6},{}\n",
                    p.quality,
                    p.bits_per_pixel,
                    format_db(p.psnr_db)
                ));
            }
        }
        out
    }
}

fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// Rate-distortion points for the plain path (`jpeg(img)`) and the EtC path
/// (`decrypt(jpeg(encrypt(img)))`), both scored against `img`.
///
/// Images whose size is not a multiple of the block size are padded by edge
/// replication before encryption and cropped after decryption.
pub fn rd_curve(
    codec: &dyn JpegCodec,
    img: &ImageBuffer,
    key: MasterKey,
    cfg: &CipherConfig,
    qualities: &[u8],
    params: &CodecParams,
) -> Result<RdCurves> {
    if qualities.is_empty() {
        return Err(Error::Invalid("at least one quality is required".into()));
    }
    let pixels = (img.width() * img.height()) as f64;
    let (cipher, sidecar) = encrypt_padded(img, key, cfg)?;
    let mut curves = RdCurves { plain: Vec::new(), encrypted: Vec::new() };
    for &q in qualities {
        let params = params.with_quality(q)?;
        let (decoded, size) = jpeg_roundtrip(codec, img, &params)?;
        curves.plain.push(RdPoint {
            quality: q,
            bits_per_pixel: size as f64 * 8.0 / pixels,
            psnr_db: psnr(img, &decoded)?,
        });
        let (decoded, size) = jpeg_roundtrip(codec, &cipher, &params)?;
        let restored = decrypt(&decoded, key, &sidecar)?;
        curves.encrypted.push(RdPoint {
            quality: q,
            bits_per_pixel: size as f64 * 8.0 / pixels,
            psnr_db: psnr(img, &restored)?,
        });
    }
    Ok(curves)
}

/// How a sharing service is assumed to re-encode uploads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderProfile {
    pub name: String,
    pub recompress_quality: u8,
    /// `None` keeps the upload's chroma subsampling.
    pub forced_subsampling: Option<Subsampling>,
}

impl ProviderProfile {
    pub fn new(name: impl Into<String>, quality: u8, forced_subsampling: Option<Subsampling>) -> Result<Self> {
        if !(1..=100).contains(&quality) {
            return Err(Error::Invalid(format!("recompression quality {quality} is not in 1..=100")));
        }
        Ok(Self { name: name.into(), recompress_quality: quality, forced_subsampling })
    }
}

/// Placeholder profiles; real services differ and change over time.
pub fn builtin_profiles() -> Vec<ProviderProfile> {
    vec![
        ProviderProfile::new("sns-a", 85, Some(Subsampling::S420)).expect("valid"),
        ProviderProfile::new("sns-b", 75, Some(Subsampling::S420)).expect("valid"),
        ProviderProfile::new("photo-store", 92, None).expect("valid"),
    ]
}

/// Parses profile lines `name,quality,subsampling` where subsampling is
/// `420`, `444` or `keep`. Blank lines, `#` comments and a
/// `name,quality,subsampling` header are skipped.
pub fn parse_profiles(text: &str) -> Result<Vec<ProviderProfile>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == "name,quality,subsampling" {
            continue;
        }
        let bad = || Error::Invalid(format!("profile line {}: {line:?}", lineno + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [name, quality, sub] = fields[..] else { return Err(bad()) };
        let quality: u8 = quality.parse().map_err(|_| bad())?;
        let forced = match sub {
            "keep" => None,
            other => Some(other.parse().map_err(|_| bad())?),
        };
        out.push(ProviderProfile::new(name, quality, forced).map_err(|_| bad())?);
    }
    Ok(out)
}

/// Reads the chroma subsampling of a JPEG from its frame header, if it is 4:2:0 or 4:4:4.
pub fn detect_subsampling(jpeg: &[u8]) -> Option<Subsampling> {
    let mut i = 2;
    while i + 4 <= jpeg.len() {
        if jpeg[i] != 0xFF {
            return None;
        }
        let marker = jpeg[i + 1];
        let len = u16::from_be_bytes([jpeg[i + 2], jpeg[i + 3]]) as usize;
        if matches!(marker, 0xC0..=0xC2) {
            let seg = jpeg.get(i + 4..i + 2 + len)?;
            let components = *seg.get(5)? as usize;
            if components == 1 {
                return Some(Subsampling::S444);
            }
            let luma = *seg.get(7)?;
            return match luma {
                0x22 => Some(Subsampling::S420),
                0x11 => Some(Subsampling::S444),
                _ => None,
            };
        }
        i += 2 + len;
    }
    None
}

/// Decodes an uploaded JPEG and re-encodes it the way `profile` does.
/// Calling it repeatedly emulates several generations of recompression.
pub fn provider_recompress(
    codec: &dyn JpegCodec,
    jpeg: &[u8],
    profile: &ProviderProfile,
) -> Result<Vec<u8>> {
    let decoded = codec.decode(jpeg)?;
    let subsampling = profile
        .forced_subsampling
        .or_else(|| detect_subsampling(jpeg))
        .unwrap_or(Subsampling::S420);
    let params = CodecParams::new(profile.recompress_quality, subsampling)?;
    codec.encode(&decoded, &params)
}
