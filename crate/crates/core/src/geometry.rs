//! Axis-aligned boxes, overlap measures and region masking.
//!
//! Boxes are half-open pixel rectangles `[x1, x2) x [y1, y2)` in absolute
//! image coordinates. A pixel at column `i`, row `j` belongs to a box when its
//! centre `(i + 0.5, j + 0.5)` falls inside it, which for integer boxes is the
//! same as `x1 <= i < x2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for geometric comparisons.
pub const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn from_array(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput(format!("non-finite box {:?}", self.to_array())));
        }
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(Error::InvalidInput(format!(
                "degenerate box {:?}",
                self.to_array()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn scale(&self, sx: f64, sy: f64) -> BBox {
        BBox {
            x1: self.x1 * sx,
            y1: self.y1 * sy,
            x2: self.x2 * sx,
            y2: self.y2 * sy,
        }
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clips to `[0, width] x [0, height]`; fails when nothing remains.
    pub fn clip(&self, width: u32, height: u32) -> Result<BBox> {
        let clipped = BBox {
            x1: self.x1.max(0.0),
            y1: self.y1.max(0.0),
            x2: self.x2.min(width as f64),
            y2: self.y2.min(height as f64),
        };
        if clipped.x1 >= clipped.x2 || clipped.y1 >= clipped.y2 {
            return Err(Error::InvalidInput(format!(
                "box {:?} lies outside the {}x{} image",
                self.to_array(),
                width,
                height
            )));
        }
        Ok(clipped)
    }

    /// L1 distance over the four coordinates.
    pub fn l1_distance(&self, other: &BBox) -> f64 {
        (self.x1 - other.x1).abs()
            + (self.y1 - other.y1).abs()
            + (self.x2 - other.x2).abs()
            + (self.y2 - other.y2).abs()
    }

    pub fn approx_eq(&self, other: &BBox, tol: f64) -> bool {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .all(|(a, b)| (a - b).abs() <= tol)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::from_array(c)
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

pub fn box_area(b: &BBox) -> Result<f64> {
    b.validate()?;
    Ok(b.area())
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Generalized IoU: `IoU - |C \ (A u B)| / |C|` with `C` the enclosing box.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = a.hull(b).area();
    inter / union - (hull - union) / hull
}

/// A raster image stored channel-major: `pixels[c * w * h + y * w + x]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidInput(format!(
                "empty image {width}x{height}x{channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(Error::InvalidInput(format!(
                "pixel buffer has {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self> {
        let len = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; len])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn area(&self) -> f64 {
        self.width as f64 * self.height as f64
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn plane(&self, channel: u8) -> &[u8] {
        let n = self.width as usize * self.height as usize;
        let start = channel as usize * n;
        &self.pixels[start..start + n]
    }

    pub fn plane_mut(&mut self, channel: u8) -> &mut [u8] {
        let n = self.width as usize * self.height as usize;
        let start = channel as usize * n;
        &mut self.pixels[start..start + n]
    }

    #[inline]
    fn index(&self, channel: u8, x: u32, y: u32) -> usize {
        let n = self.width as usize * self.height as usize;
        channel as usize * n + y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, channel: u8, x: u32, y: u32) -> u8 {
        self.pixels[self.index(channel, x, y)]
    }

    #[inline]
    pub fn set(&mut self, channel: u8, x: u32, y: u32, value: u8) {
        let i = self.index(channel, x, y);
        self.pixels[i] = value;
    }

    /// Pixel column/row range covered by a box, using the pixel-centre rule.
    pub fn pixel_span(&self, b: &BBox) -> (std::ops::Range<u32>, std::ops::Range<u32>) {
        // first index whose centre is >= v
        let edge = |v: f64, max: u32| ((v - 0.5).ceil().max(0.0) as u32).min(max);
        (
            edge(b.x1, self.width)..edge(b.x2, self.width),
            edge(b.y1, self.height)..edge(b.y2, self.height),
        )
    }
}

/// Keeps pixels inside `human ∪ object` and zeroes everything else.
pub fn union_mask(img: &Image, human: &BBox, object: &BBox) -> Result<Image> {
    human.validate()?;
    object.validate()?;
    let human = human.clip(img.width, img.height)?;
    let object = object.clip(img.width, img.height)?;

    let (w, h) = (img.width as usize, img.height as usize);
    let mut keep = vec![false; w * h];
    for b in [&human, &object] {
        let (xs, ys) = img.pixel_span(b);
        for y in ys {
            for x in xs.clone() {
                keep[y as usize * w + x as usize] = true;
            }
        }
    }

    let mut out = img.clone();
    for c in 0..img.channels {
        for (px, &k) in out.plane_mut(c).iter_mut().zip(&keep) {
            if !k {
                *px = 0;
            }
        }
    }
    Ok(out)
}
