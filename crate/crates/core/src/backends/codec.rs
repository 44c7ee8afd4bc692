//! PNG and base64 conversion for planar images.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::geometry::Image;

fn interleave(img: &Image) -> Vec<u8> {
    let n = img.width() as usize * img.height() as usize;
    let c = img.channels() as usize;
    let mut out = vec![0u8; n * c];
    for ch in 0..c {
        for (i, &v) in img.plane(ch as u8).iter().enumerate() {
            out[i * c + ch] = v;
        }
    }
    out
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let (w, h) = (img.width(), img.height());
    let data = interleave(img);
    let dynamic = match img.channels() {
        1 => image::GrayImage::from_raw(w, h, data).map(DynamicImage::ImageLuma8),
        2 => image::GrayAlphaImage::from_raw(w, h, data).map(DynamicImage::ImageLumaA8),
        3 => image::RgbImage::from_raw(w, h, data).map(DynamicImage::ImageRgb8),
        4 => image::RgbaImage::from_raw(w, h, data).map(DynamicImage::ImageRgba8),
        c => return Err(Error::Codec(format!("cannot encode {c}-channel image as PNG"))),
    }
    .ok_or_else(|| Error::Codec("raster size mismatch".into()))?;
    let mut buf = std::io::Cursor::new(Vec::new());
    dynamic
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::Codec(e.to_string()))?;
    Ok(buf.into_inner())
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let dynamic = image::load_from_memory(bytes).map_err(|e| Error::Codec(e.to_string()))?;
    let (w, h) = (dynamic.width(), dynamic.height());
    let (channels, raw): (u8, Vec<u8>) = match dynamic {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        DynamicImage::ImageLumaA8(b) => (2, b.into_raw()),
        DynamicImage::ImageRgba8(b) => (4, b.into_raw()),
        other => (3, other.to_rgb8().into_raw()),
    };
    let n = w as usize * h as usize;
    let c = channels as usize;
    let mut planar = vec![0u8; n * c];
    for i in 0..n {
        for ch in 0..c {
            planar[ch * n + i] = raw[i * c + ch];
        }
    }
    Image::new(w, h, channels, planar)
}

pub fn to_base64_png(img: &Image) -> Result<String> {
    Ok(STANDARD.encode(encode_png(img)?))
}

pub fn from_base64_png(s: &str) -> Result<Image> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::Codec(format!("bad base64 image payload: {e}")))?;
    decode_image(&bytes)
}

/// Writes a PNG, creating missing parent directories.
pub fn save_png(img: &Image, path: &std::path::Path) -> Result<()> {
    let bytes = encode_png(img)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: &std::path::Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_all_channel_counts() {
        for c in 1..=4u8 {
            let px: Vec<u8> = (0..(5 * 3 * c as usize)).map(|i| (i * 37 % 256) as u8).collect();
            let img = Image::new(5, 3, c, px).unwrap();
            let back = from_base64_png(&to_base64_png(&img).unwrap()).unwrap();
            assert_eq!(back, img);
        }
    }

    #[test]
    fn garbage_payload_is_codec_error() {
        assert!(matches!(from_base64_png("!!!"), Err(Error::Codec(_))));
        assert!(matches!(from_base64_png("aGVsbG8="), Err(Error::Codec(_))));
    }
}
