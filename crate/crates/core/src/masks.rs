//! Turns the selected label into the iteration's canvas mask: per-patch
//! detection, point-primed segmentation, similarity scoring of each masked
//! canvas and a similarity-weighted sum of the surviving masks.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use tracing::debug;

use crate::backends::{Backends, CallContext, Detector, Label, MaskGenerator, SemanticScorer};
use crate::error::{Error, Result};
use crate::model::{apply_mask, BBox, Image, SoftMask};
use crate::patching::{lift_mask, Patch, PatchSet};

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.05;
pub const DEFAULT_N_POINTS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchMaskRecord {
    pub patch_id: usize,
    /// Canvas-lifted.
    #[serde(skip)]
    pub mask: SoftMask,
    pub raw_similarity: f64,
    /// Filled in by [`aggregate_masks`]; zero for dropped records.
    pub normalized_similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionMap {
    /// Patch-local boxes per patch id.
    pub boxes: BTreeMap<usize, Vec<BBox>>,
    pub skipped: Vec<(usize, String)>,
}

pub fn detect_boxes(
    patchset: &PatchSet,
    label: &Label,
    detector: &dyn Detector,
    iteration: usize,
) -> DetectionMap {
    let results: Vec<_> = patchset
        .patches
        .par_iter()
        .map(|p| {
            let found = detector.detect(CallContext::new(iteration, p.patch_id), &p.view, label);
            (p.patch_id, found)
        })
        .collect();
    let mut map = DetectionMap::default();
    for (patch_id, found) in results {
        match found {
            Ok(dets) => {
                map.boxes
                    .insert(patch_id, dets.into_iter().map(|d| d.bbox).collect());
            }
            Err(e) => map.skipped.push((patch_id, e.to_string())),
        }
    }
    map
}

/// Suppression radius used by [`spatial_points`].
pub fn nms_radius(width: usize, height: usize) -> usize {
    (width.min(height) / 16).max(2)
}

/// Up to `n_points` heatmap peaks, greedily picked with non-maximum
/// suppression. Equal values resolve in row-major order.
pub fn spatial_points(
    ctx: CallContext,
    label: &Label,
    patch: &Patch,
    scorer: &dyn SemanticScorer,
    n_points: usize,
) -> Result<Vec<(usize, usize)>> {
    if n_points == 0 {
        return Err(Error::OutOfRange {
            what: "n_points",
            value: 0.0,
        });
    }
    let heat = scorer.heatmap(ctx, &patch.view, label)?;
    if heat.dims() != patch.view.dims() {
        return Err(Error::DimensionMismatch {
            expected: patch.view.dims(),
            actual: heat.dims(),
        });
    }
    Ok(peaks(&heat, n_points))
}

fn peaks(heat: &SoftMask, n_points: usize) -> Vec<(usize, usize)> {
    let (w, h) = heat.dims();
    let r = nms_radius(w, h) as i64;
    let mut order: Vec<usize> = (0..w * h).filter(|&i| heat.data()[i] > 0.0).collect();
    // stable sort keeps row-major order among equal values
    order.sort_by(|&a, &b| {
        heat.data()[b]
            .partial_cmp(&heat.data()[a])
            .unwrap_or(Ordering::Equal)
    });
    let mut picked: Vec<(usize, usize)> = Vec::with_capacity(n_points);
    for i in order {
        let (x, y) = (i % w, i / w);
        let clear = picked.iter().all(|&(px, py)| {
            let (dx, dy) = (px as i64 - x as i64, py as i64 - y as i64);
            dx * dx + dy * dy > r * r
        });
        if clear {
            picked.push((x, y));
            if picked.len() == n_points {
                break;
            }
        }
    }
    picked
}

/// Union over `boxes` of the segmenter's masks, in patch coordinates.
/// Without boxes the full patch is used as the box if there are points;
/// with neither the patch contributes nothing.
pub fn generate_patch_mask(
    ctx: CallContext,
    patch: &Patch,
    boxes: &[BBox],
    points: &[(usize, usize)],
    maskgen: &dyn MaskGenerator,
) -> Result<Option<SoftMask>> {
    let full = [BBox::full(patch.view.width(), patch.view.height())];
    let boxes = match (boxes.is_empty(), points.is_empty()) {
        (true, true) => return Ok(None),
        (true, false) => &full[..],
        _ => boxes,
    };
    let mut union: Option<SoftMask> = None;
    for b in boxes {
        let m = maskgen.segment(ctx, &patch.view, points, *b)?;
        if m.dims() != patch.view.dims() {
            return Err(Error::DimensionMismatch {
                expected: patch.view.dims(),
                actual: m.dims(),
            });
        }
        union = Some(match union {
            Some(u) => u.max(&m)?,
            None => m,
        });
    }
    Ok(union)
}

/// Similarity between `label` and the canvas seen through `mask`.
pub fn score_mask(
    ctx: CallContext,
    mask: &SoftMask,
    canvas: &Image,
    label: &Label,
    scorer: &dyn SemanticScorer,
) -> Result<f64> {
    let masked = apply_mask(canvas, mask)?;
    let s = scorer.similarity(ctx, &masked, label)?;
    Ok(if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) })
}

fn normalize_or_uniform(values: &[f64]) -> Vec<f64> {
    let sum: f64 = values.iter().sum();
    if sum > 0.0 {
        values.iter().map(|v| v / sum).collect()
    } else {
        vec![1.0 / values.len() as f64; values.len()]
    }
}

fn record_order(a: &PatchMaskRecord, b: &PatchMaskRecord) -> Ordering {
    a.patch_id
        .cmp(&b.patch_id)
        .then(a.raw_similarity.total_cmp(&b.raw_similarity))
        .then_with(|| {
            a.mask
                .data()
                .iter()
                .zip(b.mask.data())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Similarity-weighted sum of the canvas masks.
///
/// Raw similarities are normalized to sum to one, records below `tau` are
/// dropped and the survivors renormalized. If nothing survives, the record
/// with the highest similarity is kept alone. Records are processed in a
/// canonical order so any permutation of the input gives the same bits.
/// Returns the mask and the records with their final weights.
pub fn aggregate_masks(
    records: &[PatchMaskRecord],
    tau: f64,
) -> Result<(SoftMask, Vec<PatchMaskRecord>)> {
    let first = records.first().ok_or(Error::Empty("patch mask records"))?;
    let dims = first.mask.dims();
    if let Some(r) = records.iter().find(|r| r.mask.dims() != dims) {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: r.mask.dims(),
        });
    }
    let mut sorted = records.to_vec();
    sorted.sort_by(record_order);
    let raw: Vec<f64> = sorted.iter().map(|r| r.raw_similarity.max(0.0)).collect();
    let normalized = normalize_or_uniform(&raw);
    let mut keep: Vec<bool> = normalized.iter().map(|&s| s >= tau).collect();
    if !keep.iter().any(|&k| k) {
        let best = (0..sorted.len())
            .fold(0, |best, i| if normalized[i] > normalized[best] { i } else { best });
        keep[best] = true;
    }
    let kept_raw: Vec<f64> = raw
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(v, _)| *v)
        .collect();
    let mut weights = normalize_or_uniform(&kept_raw).into_iter();
    let mut out = vec![0.0; dims.0 * dims.1];
    for (rec, &k) in sorted.iter_mut().zip(&keep) {
        rec.normalized_similarity = 0.0;
        if !k {
            continue;
        }
        let w = weights.next().expect("one weight per kept record");
        rec.normalized_similarity = w;
        for (o, m) in out.iter_mut().zip(rec.mask.data()) {
            *o += w * m;
        }
    }
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok((SoftMask::new(dims.0, dims.1, out)?, sorted))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskStage {
    pub mask: SoftMask,
    /// Records with their aggregation weights, ordered by patch id.
    pub records: Vec<PatchMaskRecord>,
    pub skipped: Vec<(usize, String)>,
}

fn patch_record(
    patch: &Patch,
    boxes: &[BBox],
    canvas: &Image,
    label: &Label,
    backends: &Backends,
    n_points: usize,
    iteration: usize,
) -> Result<Option<PatchMaskRecord>> {
    let ctx = CallContext::new(iteration, patch.patch_id);
    let points = spatial_points(ctx, label, patch, backends.scorer.as_ref(), n_points)?;
    let Some(local) =
        generate_patch_mask(ctx, patch, boxes, &points, backends.mask_generator.as_ref())?
    else {
        return Ok(None);
    };
    let mask = lift_mask(&local, patch, canvas.dims())?;
    let raw_similarity = score_mask(ctx, &mask, canvas, label, backends.scorer.as_ref())?;
    Ok(Some(PatchMaskRecord {
        patch_id: patch.patch_id,
        mask,
        raw_similarity,
        normalized_similarity: 0.0,
    }))
}

/// Runs detection, segmentation, scoring and aggregation for one label.
///
/// When no patch yields a mask (nothing detected, no heatmap response) the
/// result is an all-zero canvas. It is an error only when every patch
/// failed.
pub fn generate_iteration_mask(
    patchset: &PatchSet,
    canvas: &Image,
    label: &Label,
    backends: &Backends,
    n_points: usize,
    tau: f64,
    iteration: usize,
) -> Result<MaskStage> {
    if patchset.canvas_size != canvas.dims() {
        return Err(Error::DimensionMismatch {
            expected: canvas.dims(),
            actual: patchset.canvas_size,
        });
    }
    let detections = detect_boxes(patchset, label, backends.detector.as_ref(), iteration);
    let mut skipped = detections.skipped.clone();
    let results: Vec<_> = patchset
        .patches
        .par_iter()
        .filter_map(|p| detections.boxes.get(&p.patch_id).map(|b| (p, b)))
        .map(|(p, boxes)| {
            let rec = patch_record(p, boxes, canvas, label, backends, n_points, iteration);
            (p.patch_id, rec)
        })
        .collect();
    let mut records = Vec::new();
    for (patch_id, rec) in results {
        match rec {
            Ok(Some(r)) => records.push(r),
            Ok(None) => {}
            Err(e) => skipped.push((patch_id, e.to_string())),
        }
    }
    skipped.sort_by_key(|s| s.0);
    if skipped.len() == patchset.len() {
        return Err(Error::AllPatchesFailed {
            stage: "mask generation",
            count: patchset.len(),
            last: skipped.last().map(|s| s.1.clone()).unwrap_or_default(),
        });
    }
    if records.is_empty() {
        debug!(iteration, %label, "no patch produced a mask");
        let (w, h) = canvas.dims();
        return Ok(MaskStage {
            mask: SoftMask::zeros(w, h)?,
            records,
            skipped,
        });
    }
    let (mask, records) = aggregate_masks(&records, tau)?;
    Ok(MaskStage {
        mask,
        records,
        skipped,
    })
}
