//! Browser demo bindings. The page hands over canvas RGBA pixels and gets
//! RGBA pixels back; alpha is dropped on input and set opaque on output.
//!
//! Each operation has a plain Rust function used by the native tests and a
//! thin `#[wasm_bindgen]` wrapper.

use etcimg_core::codec::{default_codec, jpeg_roundtrip, CodecParams, Subsampling};
use etcimg_core::pixelcore::{crop, psnr};
use etcimg_core::puzzle::{greedy_assemble, score_assembly, Puzzle};
use etcimg_core::{decrypt, encrypt, encrypt_padded, CipherConfig, CipherSidecar, ImageBuffer, MasterKey, Scheme, Steps};
use wasm_bindgen::prelude::*;

pub type DemoResult<T> = std::result::Result<T, String>;

/// An RGBA raster as exchanged with a canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct Rgba {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn from_rgba(img: &Rgba) -> DemoResult<ImageBuffer> {
    if img.pixels.len() != img.width * img.height * 4 {
        return Err(format!("expected {} RGBA bytes, got {}", img.width * img.height * 4, img.pixels.len()));
    }
    let rgb = img.pixels.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    ImageBuffer::new(img.width, img.height, 3, rgb).map_err(|e| e.to_string())
}

fn to_rgba(img: &ImageBuffer) -> Rgba {
    let pixels = match img.channels() {
        1 => img.data().iter().flat_map(|&v| [v, v, v, 255]).collect(),
        _ => img.data().chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect(),
    };
    Rgba { width: img.width(), height: img.height(), pixels }
}

fn config(scheme: &str, block_size: usize, steps: &str) -> DemoResult<CipherConfig> {
    let scheme: Scheme = scheme.parse().map_err(|e: etcimg_core::Error| e.to_string())?;
    let steps: Steps = steps.parse().map_err(|e: etcimg_core::Error| e.to_string())?;
    let base = match scheme {
        Scheme::Color => CipherConfig::color(),
        Scheme::GrayscaleBased => CipherConfig::grayscale(),
    };
    Ok(base.with_block_size(block_size).with_steps(steps))
}

fn key(hex: &str) -> DemoResult<MasterKey> {
    MasterKey::from_hex(hex.trim()).map_err(|e| e.to_string())
}

/// Ciphertext plus the sidecar text needed to decrypt it.
#[derive(Debug, Clone, PartialEq)]
pub struct Encrypted {
    pub image: Rgba,
    pub sidecar: String,
}

pub fn encrypt_image(img: &Rgba, key_hex: &str, scheme: &str, block_size: usize, steps: &str) -> DemoResult<Encrypted> {
    let cfg = config(scheme, block_size, steps)?;
    let (cipher, sidecar) = encrypt_padded(&from_rgba(img)?, key(key_hex)?, &cfg).map_err(|e| e.to_string())?;
    Ok(Encrypted { image: to_rgba(&cipher), sidecar: sidecar.to_text() })
}

pub fn decrypt_image(cipher: &Rgba, key_hex: &str, sidecar: &str) -> DemoResult<Rgba> {
    let sidecar = CipherSidecar::parse(sidecar).map_err(|e| e.to_string())?;
    let mut img = from_rgba(cipher)?;
    if sidecar.scheme == Scheme::GrayscaleBased {
        // The canvas holds gray as equal RGB triples.
        let gray = img.data().chunks_exact(3).map(|p| p[0]).collect();
        img = ImageBuffer::new(img.width(), img.height(), 1, gray).map_err(|e| e.to_string())?;
    }
    decrypt(&img, key(key_hex)?, &sidecar).map(|p| to_rgba(&p)).map_err(|e| e.to_string())
}

/// One JPEG quality applied to the plaintext and to the ciphertext.
#[derive(Debug, Clone, PartialEq)]
pub struct JpegComparison {
    pub plain_bpp: f64,
    pub plain_psnr: f64,
    pub encrypted_bpp: f64,
    pub encrypted_psnr: f64,
    /// The ciphertext after compression and decryption.
    pub reconstructed: Rgba,
}

pub fn compare_jpeg(
    img: &Rgba,
    key_hex: &str,
    scheme: &str,
    block_size: usize,
    steps: &str,
    quality: u8,
) -> DemoResult<JpegComparison> {
    let err = |e: etcimg_core::Error| e.to_string();
    let cfg = config(scheme, block_size, steps)?;
    let (plain, key) = (from_rgba(img)?, key(key_hex)?);
    let codec = default_codec().map_err(err)?;
    let params = CodecParams::new(quality, Subsampling::S420).map_err(err)?;
    let pixels = (plain.width() * plain.height()) as f64;

    let (decoded, bytes) = jpeg_roundtrip(codec, &plain, &params).map_err(err)?;
    let plain_psnr = psnr(&plain, &decoded).map_err(err)?;

    let (cipher, sidecar) = encrypt_padded(&plain, key, &cfg).map_err(err)?;
    let (decoded, enc_bytes) = jpeg_roundtrip(codec, &cipher, &params).map_err(err)?;
    let restored = decrypt(&decoded, key, &sidecar).map_err(err)?;
    let encrypted_psnr = psnr(&plain, &restored).map_err(err)?;

    Ok(JpegComparison {
        plain_bpp: 8.0 * bytes as f64 / pixels,
        plain_psnr,
        encrypted_bpp: 8.0 * enc_bytes as f64 / pixels,
        encrypted_psnr,
        reconstructed: to_rgba(&restored),
    })
}

/// A jigsaw attack on a color-scheme ciphertext of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub pieces: usize,
    pub dc: f64,
    pub nc: f64,
    pub lc: f64,
    pub cipher: Rgba,
    pub assembled: Rgba,
}

/// The image is cropped to whole blocks first.
pub fn attack_image(
    img: &Rgba,
    key_hex: &str,
    block_size: usize,
    steps: &str,
    orientation_search: bool,
) -> DemoResult<AttackOutcome> {
    let err = |e: etcimg_core::Error| e.to_string();
    let cfg = config("color", block_size, steps)?;
    let plain = from_rgba(img)?;
    let (w, h) = (plain.width() / block_size * block_size, plain.height() / block_size * block_size);
    if w == 0 || h == 0 {
        return Err(format!("image smaller than one {block_size}x{block_size} block"));
    }
    let plain = crop(&plain, w, h).map_err(err)?;
    let key = key(key_hex)?;
    let (cipher, _) = encrypt(&plain, key, &cfg).map_err(err)?;
    let puzzle = Puzzle::from_ciphertext(&cipher, key, &cfg).map_err(err)?;
    let assembly = greedy_assemble(&puzzle, orientation_search);
    let metrics = score_assembly(&assembly, &puzzle).map_err(err)?;
    Ok(AttackOutcome {
        pieces: puzzle.len(),
        dc: metrics.dc,
        nc: metrics.nc,
        lc: metrics.lc,
        cipher: to_rgba(&cipher),
        assembled: to_rgba(&puzzle.render(&assembly).map_err(err)?),
    })
}

/// An image handed back to JavaScript, with named numeric results.
#[wasm_bindgen]
pub struct DemoImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    text: String,
    values: Vec<f64>,
}

impl DemoImage {
    fn new(img: Rgba, text: String, values: Vec<f64>) -> Self {
        Self { width: img.width, height: img.height, pixels: img.pixels, text, values }
    }
}

#[wasm_bindgen]
impl DemoImage {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// RGBA bytes for an `ImageData`.
    #[wasm_bindgen(getter)]
    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }

    /// Sidecar text for `encrypt`, empty otherwise.
    #[wasm_bindgen(getter)]
    pub fn text(&self) -> String {
        self.text.clone()
    }

    /// `[plain_bpp, plain_psnr, encrypted_bpp, encrypted_psnr]` for `jpeg`,
    /// `[pieces, dc, nc, lc]` for `attack`.
    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
}

fn rgba(width: usize, height: usize, pixels: Vec<u8>) -> Rgba {
    Rgba { width, height, pixels }
}

#[wasm_bindgen(js_name = encrypt)]
pub fn js_encrypt(
    pixels: Vec<u8>,
    width: usize,
    height: usize,
    key_hex: &str,
    scheme: &str,
    block_size: usize,
    steps: &str,
) -> Result<DemoImage, JsError> {
    let out = encrypt_image(&rgba(width, height, pixels), key_hex, scheme, block_size, steps).map_err(|e| JsError::new(&e))?;
    Ok(DemoImage::new(out.image, out.sidecar, Vec::new()))
}

#[wasm_bindgen(js_name = decrypt)]
pub fn js_decrypt(pixels: Vec<u8>, width: usize, height: usize, key_hex: &str, sidecar: &str) -> Result<DemoImage, JsError> {
    let out = decrypt_image(&rgba(width, height, pixels), key_hex, sidecar).map_err(|e| JsError::new(&e))?;
    Ok(DemoImage::new(out, String::new(), Vec::new()))
}

#[wasm_bindgen(js_name = jpeg)]
#[allow(clippy::too_many_arguments)]
pub fn js_jpeg(
    pixels: Vec<u8>,
    width: usize,
    height: usize,
    key_hex: &str,
    scheme: &str,
    block_size: usize,
    steps: &str,
    quality: u8,
) -> Result<DemoImage, JsError> {
    let out = compare_jpeg(&rgba(width, height, pixels), key_hex, scheme, block_size, steps, quality)
        .map_err(|e| JsError::new(&e))?;
    let values = vec![out.plain_bpp, out.plain_psnr, out.encrypted_bpp, out.encrypted_psnr];
    Ok(DemoImage::new(out.reconstructed, String::new(), values))
}

#[wasm_bindgen(js_name = attack)]
pub fn js_attack(
    pixels: Vec<u8>,
    width: usize,
    height: usize,
    key_hex: &str,
    block_size: usize,
    steps: &str,
    orientation_search: bool,
) -> Result<DemoImage, JsError> {
    let out = attack_image(&rgba(width, height, pixels), key_hex, block_size, steps, orientation_search)
        .map_err(|e| JsError::new(&e))?;
    let values = vec![out.pieces as f64, out.dc, out.nc, out.lc];
    Ok(DemoImage::new(out.assembled, String::new(), values))
}
