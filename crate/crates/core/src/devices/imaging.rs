//! Resize, PNG and base64 helpers for camera frames.
//!
//! Resizing is bilinear with half-pixel centres: destination column `x`
//! samples source coordinate `(x + 0.5) * src_w / dst_w - 0.5`, clamped to
//! the image, and likewise for rows. Channel values are rounded to nearest.
//! The 640x480 to 224x224 resize squashes the aspect ratio; nothing is
//! cropped.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::codecs::png::PngEncoder;
use image::{ImageEncoder, RgbImage};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("png: {0}")]
    Png(#[from] image::ImageError),
    #[error("base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("expected a {want_w}x{want_h} image, got {got_w}x{got_h}")]
    Shape {
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
}

fn axis_taps(dst: u32, src: u32) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|x| {
            let s = ((x as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src as usize - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear(src: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (sw, sh) = src.dimensions();
    let cols = axis_taps(width, sw);
    let rows = axis_taps(height, sh);
    let raw = src.as_raw();
    let stride = sw as usize * 3;
    let mut out = RgbImage::new(width, height);
    let dst = &mut *out;
    for (y, &(r0, r1, fy)) in rows.iter().enumerate() {
        for (x, &(c0, c1, fx)) in cols.iter().enumerate() {
            for ch in 0..3 {
                let p = |r: usize, c: usize| raw[r * stride + c * 3 + ch] as f64;
                let top = p(r0, c0) * (1.0 - fx) + p(r0, c1) * fx;
                let bottom = p(r1, c0) * (1.0 - fx) + p(r1, c1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                dst[(y * width as usize + x) * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, ImageError> {
    let mut buf = Vec::new();
    PngEncoder::new(&mut buf).write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(buf)
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    Ok(image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8())
}

pub fn to_base64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn from_base64(text: &str) -> Result<Vec<u8>, ImageError> {
    Ok(STANDARD.decode(text)?)
}

/// Decode a base64 PNG and check its dimensions.
pub fn decode_b64_png(text: &str, width: u32, height: u32) -> Result<RgbImage, ImageError> {
    let img = decode_png(&from_base64(text)?)?;
    if img.dimensions() != (width, height) {
        return Err(ImageError::Shape {
            want_w: width,
            want_h: height,
            got_w: img.width(),
            got_h: img.height(),
        });
    }
    Ok(img)
}

/// Width and height from a PNG header without decoding pixel data.
pub fn png_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    const SIG: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];
    if bytes.len() < 24 || bytes[..8] != SIG || &bytes[12..16] != b"IHDR" {
        return None;
    }
    let w = u32::from_be_bytes(bytes[16..20].try_into().ok()?);
    let h = u32::from_be_bytes(bytes[20..24].try_into().ok()?);
    Some((w, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn test_card() -> RgbImage {
        RgbImage::from_fn(640, 480, |x, _| if x < 320 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) })
    }

    #[test]
    fn half_card_seam_matches_hand_computed_bilinear() {
        let out = resize_bilinear(&test_card(), 224, 224);
        // Column x samples s = (x + 0.5) * 640/224 - 0.5.
        // x = 111 -> s = 318.07: taps 318 and 319, both black -> 0.
        // x = 112 -> s = 320.93: taps 320 and 321, both white -> 255.
        let col_mean = |x: u32| -> f64 {
            (0..224).map(|y| out.get_pixel(x, y).0[0] as f64).sum::<f64>() / 224.0
        };
        for x in 0..224 {
            let s = (x as f64 + 0.5) * 640.0 / 224.0 - 0.5;
            let i0 = s.floor();
            let f = s - i0;
            let v0 = if i0 < 320.0 { 0.0 } else { 255.0 };
            let v1 = if i0 + 1.0 < 320.0 { 0.0 } else { 255.0 };
            let expected = v0 * (1.0 - f) + v1 * f;
            assert!((col_mean(x) - expected).abs() <= 1.0, "column {x}");
        }
        assert_eq!(col_mean(111), 0.0);
        assert_eq!(col_mean(112), 255.0);
    }

    #[test]
    fn png_roundtrip_keeps_shape_and_pixels() {
        let img = resize_bilinear(&test_card(), 224, 224);
        let png = encode_png(&img).unwrap();
        assert_eq!(png_dimensions(&png), Some((224, 224)));
        let back = decode_b64_png(&to_base64(&png), 224, 224).unwrap();
        assert_eq!(back.as_raw(), img.as_raw());
        assert_eq!(back.as_raw().len(), 224 * 224 * 3);
        assert!(decode_b64_png(&to_base64(&png), 640, 480).is_err());
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = RgbImage::from_pixel(640, 480, Rgb([12, 200, 77]));
        let out = resize_bilinear(&img, 224, 224);
        assert!(out.pixels().all(|p| p.0 == [12, 200, 77]));
    }
}
