//! Multi-scale patch decomposition and patch-to-canvas geometry.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BBox, Image, SoftMask};

/// Which cuts of the canvas are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PatchScheme {
    Original,
    OriginalHalve,
    #[default]
    OriginalHalveQuarters,
}

impl PatchScheme {
    pub fn tags(self) -> &'static [PatchTag] {
        use PatchTag::*;
        match self {
            PatchScheme::Original => &[Original],
            PatchScheme::OriginalHalve => &[Original, HalveHTop, HalveHBottom, HalveVLeft, HalveVRight],
            PatchScheme::OriginalHalveQuarters => &[
                Original,
                HalveHTop,
                HalveHBottom,
                HalveVLeft,
                HalveVRight,
                QuarterTl,
                QuarterTr,
                QuarterBl,
                QuarterBr,
            ],
        }
    }
}

impl fmt::Display for PatchScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatchScheme::Original => "original",
            PatchScheme::OriginalHalve => "original+halve",
            PatchScheme::OriginalHalveQuarters => "original+halve+quarters",
        })
    }
}

impl FromStr for PatchScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "original" => Ok(PatchScheme::Original),
            "original+halve" => Ok(PatchScheme::OriginalHalve),
            "original+halve+quarters" => Ok(PatchScheme::OriginalHalveQuarters),
            other => Err(Error::Invalid(format!("unknown patch scheme {other:?}"))),
        }
    }
}

/// Patch placement. The enumeration order is the patch order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchTag {
    Original,
    HalveHTop,
    HalveHBottom,
    HalveVLeft,
    HalveVRight,
    QuarterTl,
    QuarterTr,
    QuarterBl,
    QuarterBr,
}

impl PatchTag {
    /// Footprint in a `width`x`height` canvas. Splits sit at `floor(W/2)`
    /// and `floor(H/2)`, so odd extents give the extra pixel to the
    /// right/bottom piece.
    pub fn footprint(self, width: usize, height: usize) -> BBox {
        let (mx, my) = (width / 2, height / 2);
        let (x, y, x1, y1) = match self {
            PatchTag::Original => (0, 0, width, height),
            PatchTag::HalveHTop => (0, 0, width, my),
            PatchTag::HalveHBottom => (0, my, width, height),
            PatchTag::HalveVLeft => (0, 0, mx, height),
            PatchTag::HalveVRight => (mx, 0, width, height),
            PatchTag::QuarterTl => (0, 0, mx, my),
            PatchTag::QuarterTr => (mx, 0, width, my),
            PatchTag::QuarterBl => (0, my, mx, height),
            PatchTag::QuarterBr => (mx, my, width, height),
        };
        BBox {
            x_min: x,
            y_min: y,
            x_max: x1,
            y_max: y1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub patch_id: usize,
    pub origin: (usize, usize),
    pub view: Image,
    pub tag: PatchTag,
}

impl Patch {
    /// The patch rectangle in canvas coordinates.
    pub fn footprint(&self) -> BBox {
        BBox {
            x_min: self.origin.0,
            y_min: self.origin.1,
            x_max: self.origin.0 + self.view.width(),
            y_max: self.origin.1 + self.view.height(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub canvas_size: (usize, usize),
    pub patches: Vec<Patch>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn get(&self, patch_id: usize) -> Option<&Patch> {
        self.patches.iter().find(|p| p.patch_id == patch_id)
    }
}

pub fn build_patch_set(image: &Image, scheme: PatchScheme) -> Result<PatchSet> {
    let (w, h) = image.dims();
    if scheme != PatchScheme::Original && (w < 2 || h < 2) {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            reason: "splitting schemes need at least 2x2",
        });
    }
    let patches = scheme
        .tags()
        .iter()
        .enumerate()
        .map(|(patch_id, &tag)| {
            let fp = tag.footprint(w, h);
            Ok(Patch {
                patch_id,
                origin: (fp.x_min, fp.y_min),
                view: image.crop(fp)?,
                tag,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchSet {
        canvas_size: (w, h),
        patches,
    })
}

/// Translates a patch-local box into canvas coordinates.
pub fn patch_to_global(bbox: BBox, patch: &Patch) -> Result<BBox> {
    bbox.validate_in(patch.view.width(), patch.view.height())?;
    let (ox, oy) = patch.origin;
    Ok(BBox {
        x_min: bbox.x_min + ox,
        y_min: bbox.y_min + oy,
        x_max: bbox.x_max + ox,
        y_max: bbox.y_max + oy,
    })
}

/// Places a patch-sized mask onto a zeroed canvas.
pub fn lift_mask(patch_mask: &SoftMask, patch: &Patch, canvas: (usize, usize)) -> Result<SoftMask> {
    if patch_mask.dims() != patch.view.dims() {
        return Err(Error::DimensionMismatch {
            expected: patch.view.dims(),
            actual: patch_mask.dims(),
        });
    }
    let fp = patch.footprint();
    fp.validate_in(canvas.0, canvas.1)?;
    let mut data = vec![0.0; canvas.0 * canvas.1];
    for y in 0..fp.height() {
        let dst = (fp.y_min + y) * canvas.0 + fp.x_min;
        let src = y * patch_mask.width();
        data[dst..dst + fp.width()].copy_from_slice(&patch_mask.data()[src..src + fp.width()]);
    }
    SoftMask::new(canvas.0, canvas.1, data)
}
