//! Image, mask and box types plus the pixel algebra shared by every stage.
//!
//! All scalar data is `f64` in `[0, 1]`, stored row-major. Images are RGB
//! with interleaved channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold used when a soft mask has to become a region.
pub const DEFAULT_BINARIZE_THRESHOLD: f64 = 0.5;

pub const CHANNELS: usize = 3;

fn check_unit(what: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(&value) => Err(Error::OutOfRange { what, value }),
        None => Ok(()),
    }
}

fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::TooSmall {
                width,
                height,
                reason: "image must have at least one pixel",
            });
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::Invalid(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height * CHANNELS,
                data.len()
            )));
        }
        check_unit("image pixel", &data)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from 8-bit RGB samples, normalizing by 255.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[i + c] = v.clamp(0.0, 1.0);
        }
    }

    /// Copies the rectangle `bbox` into a new image.
    pub fn crop(&self, bbox: BBox) -> Result<Image> {
        bbox.validate_in(self.width, self.height)?;
        let (w, h) = (bbox.width(), bbox.height());
        let mut data = Vec::with_capacity(w * h * CHANNELS);
        for y in bbox.y_min..bbox.y_max {
            let start = (y * self.width + bbox.x_min) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + w * CHANNELS]);
        }
        Ok(Image {
            width: w,
            height: h,
            data,
        })
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Per-pixel confidence map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftMask {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl SoftMask {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::TooSmall {
                width,
                height,
                reason: "mask must have at least one pixel",
            });
        }
        if data.len() != width * height {
            return Err(Error::Invalid(format!(
                "mask {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        check_unit("mask value", &data)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, 0.0)
    }

    /// Builds a mask from rows; convenient for small literal masks.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Invalid("ragged mask rows".into()));
        }
        Self::new(width, height, rows.concat())
    }

    /// Maps 8-bit gray values to `[0, 1]`.
    pub fn from_gray8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value.clamp(0.0, 1.0);
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn crop(&self, bbox: BBox) -> Result<SoftMask> {
        bbox.validate_in(self.width, self.height)?;
        let mut data = Vec::with_capacity(bbox.area());
        for y in bbox.y_min..bbox.y_max {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + bbox.x_min..row + bbox.x_max]);
        }
        Ok(SoftMask {
            width: bbox.width(),
            height: bbox.height(),
            data,
        })
    }

    /// Pixelwise product.
    pub fn product(&self, other: &SoftMask) -> Result<SoftMask> {
        check_dims(self.dims(), other.dims())?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(SoftMask { data, ..*self })
    }

    /// Pixelwise maximum (soft union).
    pub fn max(&self, other: &SoftMask) -> Result<SoftMask> {
        check_dims(self.dims(), other.dims())?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.max(*b))
            .collect();
        Ok(SoftMask { data, ..*self })
    }

    /// Pixelwise inversion `1 - m`.
    pub fn inverted(&self) -> SoftMask {
        SoftMask {
            data: self.data.iter().map(|v| 1.0 - v).collect(),
            ..*self
        }
    }

    pub fn to_gray8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Thresholded mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::TooSmall {
                width,
                height,
                reason: "mask must have at least one pixel",
            });
        }
        if data.len() != width * height {
            return Err(Error::Invalid(format!(
                "mask {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn from_rows(rows: &[&[bool]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Invalid("ragged mask rows".into()));
        }
        Self::new(width, height, rows.concat())
    }

    /// Marks every pixel of `bbox` in a `width`x`height` canvas.
    pub fn from_box(width: usize, height: usize, bbox: BBox) -> Result<Self> {
        bbox.validate_in(width, height)?;
        let mut mask = Self::empty(width, height)?;
        mask.fill_box(bbox);
        Ok(mask)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    /// Sets all pixels of `bbox`, clipped to the mask.
    pub fn fill_box(&mut self, bbox: BBox) {
        let x_max = bbox.x_max.min(self.width);
        let y_max = bbox.y_max.min(self.height);
        for y in bbox.y_min.min(y_max)..y_max {
            for x in bbox.x_min.min(x_max)..x_max {
                self.data[y * self.width + x] = true;
            }
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn crop(&self, bbox: BBox) -> Result<BinaryMask> {
        bbox.validate_in(self.width, self.height)?;
        let mut data = Vec::with_capacity(bbox.area());
        for y in bbox.y_min..bbox.y_max {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + bbox.x_min..row + bbox.x_max]);
        }
        Ok(BinaryMask {
            width: bbox.width(),
            height: bbox.height(),
            data,
        })
    }

    /// Tight bounding box of the set pixels.
    pub fn bounding_box(&self) -> Option<BBox> {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bounds = Some(match bounds {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bounds.map(|(x0, y0, x1, y1)| BBox {
            x_min: x0,
            y_min: y0,
            x_max: x1 + 1,
            y_max: y1 + 1,
        })
    }

    pub fn to_soft(&self) -> SoftMask {
        SoftMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Intersection over union; two empty masks count as identical.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        check_dims(self.dims(), other.dims())?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        Ok(if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        })
    }
}

/// Axis-aligned box; `x_max`/`y_max` are exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBox(b));
        }
        Ok(b)
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x_min: 0,
            y_min: 0,
            x_max: width,
            y_max: height,
        }
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x_min..self.x_max).contains(&x) && (self.y_min..self.y_max).contains(&y)
    }

    pub fn validate_in(&self, width: usize, height: usize) -> Result<()> {
        if self.x_min < self.x_max
            && self.y_min < self.y_max
            && self.x_max <= width
            && self.y_max <= height
        {
            Ok(())
        } else {
            Err(Error::InvalidBox(*self))
        }
    }

    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let b = BBox {
            x_min: self.x_min.max(other.x_min),
            y_min: self.y_min.max(other.y_min),
            x_max: self.x_max.min(other.x_max),
            y_max: self.y_max.min(other.y_max),
        };
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }
}

/// Pixel is set iff its value is strictly above `threshold`.
pub fn binarize(mask: &SoftMask, threshold: f64) -> BinaryMask {
    BinaryMask {
        width: mask.width,
        height: mask.height,
        data: mask.data.iter().map(|&v| v > threshold).collect(),
    }
}

/// Mean absolute per-pixel difference.
pub fn mask_l1_distance(a: &SoftMask, b: &SoftMask) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.data.len() as f64)
}

/// Scales every channel of every pixel by the mask value.
pub fn apply_mask(image: &Image, mask: &SoftMask) -> Result<Image> {
    check_dims(image.dims(), mask.dims())?;
    let data = image
        .data
        .chunks_exact(CHANNELS)
        .zip(&mask.data)
        .flat_map(|(px, &m)| px.iter().map(move |v| v * m))
        .collect();
    Ok(Image {
        width: image.width,
        height: image.height,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binarize_is_strict() {
        let m = SoftMask::from_rows(&[&[0.2, 0.8]]).unwrap();
        assert_eq!(binarize(&m, 0.5).data(), &[false, true]);
        let zeros = SoftMask::zeros(3, 2).unwrap();
        assert!(binarize(&zeros, 0.0).is_empty());
        let half = SoftMask::from_rows(&[&[0.5]]).unwrap();
        assert_eq!(binarize(&half, 0.5).data(), &[false]);
    }

    #[test]
    fn l1_distance_examples() {
        let a = SoftMask::from_rows(&[&[0.2, 0.4]]).unwrap();
        let b = SoftMask::from_rows(&[&[0.4, 0.4]]).unwrap();
        assert!((mask_l1_distance(&a, &b).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(mask_l1_distance(&a, &a).unwrap(), 0.0);
        let ones = SoftMask::filled(4, 4, 1.0).unwrap();
        let zeros = SoftMask::zeros(4, 4).unwrap();
        assert_eq!(mask_l1_distance(&ones, &zeros).unwrap(), 1.0);
        assert!(mask_l1_distance(&ones, &SoftMask::zeros(4, 3).unwrap()).is_err());
    }

    #[test]
    fn apply_mask_examples() {
        let img = Image::filled(2, 2, [0.8, 0.4, 0.2]).unwrap();
        let ones = SoftMask::filled(2, 2, 1.0).unwrap();
        assert_eq!(apply_mask(&img, &ones).unwrap(), img);
        let zeros = SoftMask::zeros(2, 2).unwrap();
        assert!(apply_mask(&img, &zeros).unwrap().data().iter().all(|&v| v == 0.0));
        let half = SoftMask::filled(2, 2, 0.5).unwrap();
        assert!((apply_mask(&img, &half).unwrap().pixel(1, 1)[0] - 0.4).abs() < 1e-12);
        assert!(apply_mask(&img, &SoftMask::zeros(3, 2).unwrap()).is_err());
    }

    #[test]
    fn rejects_out_of_range_and_bad_boxes() {
        assert!(SoftMask::new(1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, vec![0.0, -0.1, 0.0]).is_err());
        assert!(BBox::new(3, 0, 3, 1).is_err());
        assert!(BBox::new(0, 0, 5, 5).unwrap().validate_in(4, 5).is_err());
    }

    #[test]
    fn bounding_box_is_tight() {
        let mut m = BinaryMask::empty(8, 8).unwrap();
        m.fill_box(BBox::new(2, 3, 5, 7).unwrap());
        assert_eq!(m.bounding_box(), Some(BBox::new(2, 3, 5, 7).unwrap()));
        assert_eq!(BinaryMask::empty(2, 2).unwrap().bounding_box(), None);
    }

    fn mask_strategy(w: usize, h: usize) -> impl Strategy<Value = SoftMask> {
        proptest::collection::vec(0.0f64..=1.0, w * h)
            .prop_map(move |d| SoftMask::new(w, h, d).unwrap())
    }

    proptest! {
        #[test]
        fn apply_mask_composes(
            px in proptest::collection::vec(0.0f64..=1.0, 4 * 3 * 3),
            m1 in mask_strategy(4, 3),
            m2 in mask_strategy(4, 3),
        ) {
            let img = Image::new(4, 3, px).unwrap();
            let twice = apply_mask(&apply_mask(&img, &m1).unwrap(), &m2).unwrap();
            let once = apply_mask(&img, &m1.product(&m2).unwrap()).unwrap();
            for (a, b) in twice.data().iter().zip(once.data()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn l1_triangle_inequality(a in mask_strategy(5, 4), b in mask_strategy(5, 4), c in mask_strategy(5, 4)) {
            let ab = mask_l1_distance(&a, &b).unwrap();
            let bc = mask_l1_distance(&b, &c).unwrap();
            let ac = mask_l1_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!((ab - mask_l1_distance(&b, &a).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn binarize_monotone_in_threshold(m in mask_strategy(6, 6), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let low = binarize(&m, lo);
            let high = binarize(&m, hi);
            for (l, h) in low.data().iter().zip(high.data()) {
                prop_assert!(!h || *l);
            }
        }
    }
}
