use etcimg_web::{attack_image, compare_jpeg, decrypt_image, encrypt_image, Rgba};

const KEY: &str = "0123456789abcdef";

fn gradient(width: usize, height: usize) -> Rgba {
    let mut pixels = Vec::with_capacity(width * height * 4);
    for y in 0..height {
        for x in 0..width {
            pixels.extend([(x * 255 / width) as u8, (y * 255 / height) as u8, ((x + y) % 256) as u8, 255]);
        }
    }
    Rgba { width, height, pixels }
}

#[test]
fn encrypt_then_decrypt_restores_canvas_pixels() {
    for scheme in ["color", "gray"] {
        let img = gradient(70, 45);
        let enc = encrypt_image(&img, KEY, scheme, 16, "srn").unwrap();
        assert!(enc.sidecar.contains("pad_r=10\n"));
        assert_ne!(enc.image.pixels, img.pixels);
        assert_eq!(decrypt_image(&enc.image, KEY, &enc.sidecar).unwrap(), img, "{scheme}");
    }
}

#[test]
fn wrong_key_does_not_decrypt() {
    let img = gradient(64, 64);
    let enc = encrypt_image(&img, KEY, "color", 16, "srnc").unwrap();
    assert_ne!(decrypt_image(&enc.image, "fedcba9876543210", &enc.sidecar).unwrap(), img);
}

#[test]
fn bad_inputs_are_reported() {
    let img = gradient(32, 32);
    assert!(encrypt_image(&img, "zz", "color", 16, "s").is_err());
    assert!(encrypt_image(&img, KEY, "sepia", 16, "s").is_err());
    assert!(encrypt_image(&img, KEY, "color", 16, "x").is_err());
    let short = Rgba { width: 32, height: 32, pixels: vec![0; 10] };
    assert!(encrypt_image(&short, KEY, "color", 16, "s").is_err());
    assert!(attack_image(&gradient(8, 8), KEY, 16, "s", false).is_err());
}

#[test]
fn jpeg_comparison_without_steps_is_symmetric() {
    let img = gradient(64, 48);
    let cmp = compare_jpeg(&img, KEY, "color", 16, "", 80).unwrap();
    assert_eq!(cmp.plain_bpp, cmp.encrypted_bpp);
    assert_eq!(cmp.plain_psnr, cmp.encrypted_psnr);
    let cmp = compare_jpeg(&img, KEY, "color", 16, "srnc", 80).unwrap();
    assert!(cmp.encrypted_psnr > 25.0, "{}", cmp.encrypted_psnr);
    assert_eq!((cmp.reconstructed.width, cmp.reconstructed.height), (64, 48));
}

#[test]
fn attack_crops_to_whole_blocks() {
    let img = gradient(100, 70);
    let out = attack_image(&img, KEY, 32, "", false).unwrap();
    assert_eq!(out.pieces, 6);
    assert_eq!((out.assembled.width, out.assembled.height), (96, 64));
    assert!(out.dc >= 0.0 && out.dc <= 1.0 && out.nc <= 1.0 && out.lc <= 1.0);
    let scrambled = attack_image(&img, KEY, 16, "srnc", false).unwrap();
    assert_eq!(scrambled.pieces, 24);
    assert_eq!(scrambled.cipher.pixels.len(), scrambled.assembled.pixels.len());
    assert!(scrambled.nc <= 1.0 && scrambled.lc >= 1.0 / 24.0);
}
