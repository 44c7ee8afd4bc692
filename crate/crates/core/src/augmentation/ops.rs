//! Raster primitives on channel-major images.

use crate::error::Result;
use crate::geometry::Image;

/// Nearest-neighbour resize; keeps marker values intact.
pub fn resize_nearest(img: &Image, out_w: u32, out_h: u32) -> Result<Image> {
    let (w, h) = (img.width(), img.height());
    let xs: Vec<u32> = (0..out_w)
        .map(|x| (((x as f64 + 0.5) * w as f64 / out_w as f64) as u32).min(w - 1))
        .collect();
    let ys: Vec<u32> = (0..out_h)
        .map(|y| (((y as f64 + 0.5) * h as f64 / out_h as f64) as u32).min(h - 1))
        .collect();
    let mut out = Vec::with_capacity(out_w as usize * out_h as usize * img.channels() as usize);
    for c in 0..img.channels() {
        let plane = img.plane(c);
        for &sy in &ys {
            let row = &plane[(sy * w) as usize..((sy + 1) * w) as usize];
            out.extend(xs.iter().map(|&sx| row[sx as usize]));
        }
    }
    Image::new(out_w, out_h, img.channels(), out)
}

pub fn flip_horizontal(img: &Image) -> Image {
    let mut out = img.clone();
    let w = img.width() as usize;
    for c in 0..img.channels() {
        for row in out.plane_mut(c).chunks_mut(w) {
            row.reverse();
        }
    }
    out
}

pub fn pad(img: &Image, left: u32, top: u32, right: u32, bottom: u32, fill: u8) -> Result<Image> {
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = (w + left + right, h + top + bottom);
    let mut out = Image::filled(ow, oh, img.channels(), fill)?;
    for c in 0..img.channels() {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            let d = ((y + top) * ow + left) as usize;
            let s = (y * w) as usize;
            dst[d..d + w as usize].copy_from_slice(&src[s..s + w as usize]);
        }
    }
    Ok(out)
}

/// `v * gain + bias`, clamped, on channels from `first_channel` on.
pub fn jitter(img: &mut Image, gain: f64, bias: f64, first_channel: u8) {
    for c in first_channel..img.channels() {
        for v in img.plane_mut(c) {
            *v = (*v as f64 * gain + bias).round().clamp(0.0, 255.0) as u8;
        }
    }
}

/// 3x3 box blur with edge replication.
pub fn blur(img: &mut Image, first_channel: u8) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for c in first_channel..img.channels() {
        let src = img.plane(c).to_vec();
        let dst = img.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0u32;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let xx = (x + dx).clamp(0, w - 1);
                        let yy = (y + dy).clamp(0, h - 1);
                        sum += src[(yy * w + xx) as usize] as u32;
                    }
                }
                dst[(y * w + x) as usize] = ((sum + 4) / 9) as u8;
            }
        }
    }
}

pub fn erase(img: &mut Image, x: u32, y: u32, ew: u32, eh: u32, value: u8, first_channel: u8) {
    let w = img.width();
    let x2 = (x + ew).min(w);
    let y2 = (y + eh).min(img.height());
    for c in first_channel..img.channels() {
        let plane = img.plane_mut(c);
        for yy in y..y2 {
            plane[(yy * w + x) as usize..(yy * w + x2) as usize].fill(value);
        }
    }
}
