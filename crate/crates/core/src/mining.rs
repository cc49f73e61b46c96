//! Counterfactual contrastive scoring and the progressive mining ledger.
//!
//! For every patch the VLM scores the candidate vocabulary on the patch and
//! on a copy where the hypothesized object was inpainted away. The signed
//! per-label drop is the patch's [`DiffVector`]. Per iteration each label
//! keeps its largest non-negative drop over patches; the [`ScoreLedger`]
//! multiplies these per-iteration vectors through normalized priors so a
//! label has to respond in every iteration to stay on top.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backends::{CallContext, Inpainter, Label, ScoredVocabulary};
use crate::candidates::CandidatePrompt;
use crate::error::{Error, Result};
use crate::model::{binarize, BinaryMask, Image, SoftMask};
use crate::patching::Patch;

/// Scores within this fraction of the maximum are treated as tied, so that
/// rounding in the normalized products does not override vocabulary order.
const TIE_TOLERANCE: f64 = 1e-12;

pub const POSITIVE_PROMPT_TEMPLATE: &str =
    "{back}, high quality, detailed, and well-integrated with the original image";
pub const NEGATIVE_PROMPT_TEMPLATE: &str = "{fore} is not a {task}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ZeroSumPolicy {
    /// An all-zero vector normalizes to the uniform distribution.
    #[default]
    Uniform,
    /// An all-zero iteration leaves the cumulative vector unchanged.
    Carry,
}

impl FromStr for ZeroSumPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform" => Ok(ZeroSumPolicy::Uniform),
            "carry" => Ok(ZeroSumPolicy::Carry),
            other => Err(Error::Invalid(format!("unknown zero-sum policy {other:?}"))),
        }
    }
}

impl fmt::Display for ZeroSumPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZeroSumPolicy::Uniform => "uniform",
            ZeroSumPolicy::Carry => "carry",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Clamp negative drops to zero before the ledger. When off, the
    /// per-iteration vector is shifted by its minimum instead.
    pub clamp_negative: bool,
    pub zero_sum_policy: ZeroSumPolicy,
    /// Lower bound applied to raw scores before multiplication; 0 keeps
    /// exact suppression.
    pub ledger_floor: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            clamp_negative: true,
            zero_sum_policy: ZeroSumPolicy::Uniform,
            ledger_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSource {
    PreviousMask,
    CandidateBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintRegion {
    /// Patch coordinates.
    pub region: BinaryMask,
    pub provenance: RegionSource,
}

/// Region to erase from `patch`: the previous canvas mask when there is one,
/// otherwise the candidate's boxes. `None` means there is nothing to erase
/// and the patch contributes all-zero drops.
pub fn build_inpaint_region(
    patch: &Patch,
    previous_canvas_mask: Option<&SoftMask>,
    candidate: &CandidatePrompt,
    threshold: f64,
) -> Result<Option<InpaintRegion>> {
    let fp = patch.footprint();
    let (region, provenance) = match previous_canvas_mask {
        Some(mask) => {
            fp.validate_in(mask.width(), mask.height())
                .map_err(|_| Error::DimensionMismatch {
                    expected: (fp.x_max, fp.y_max),
                    actual: mask.dims(),
                })?;
            (binarize(&mask.crop(fp)?, threshold), RegionSource::PreviousMask)
        }
        None => {
            let mut region = BinaryMask::empty(fp.width(), fp.height())?;
            for b in candidate.boxes.iter().filter_map(|b| b.intersect(&fp)) {
                region.fill_box(crate::model::BBox {
                    x_min: b.x_min - fp.x_min,
                    y_min: b.y_min - fp.y_min,
                    x_max: b.x_max - fp.x_min,
                    y_max: b.y_max - fp.y_min,
                });
            }
            (region, RegionSource::CandidateBox)
        }
    };
    Ok((!region.is_empty()).then_some(InpaintRegion { region, provenance }))
}

pub fn positive_prompt(back: &Label) -> String {
    POSITIVE_PROMPT_TEMPLATE.replace("{back}", back.as_str())
}

pub fn negative_prompt(fore: &Label, task: &str) -> String {
    NEGATIVE_PROMPT_TEMPLATE
        .replace("{fore}", fore.as_str())
        .replace("{task}", task)
}

/// Inpaints `region` out of the patch view. Fails if the inpainter changes
/// the size of the view or touches pixels outside the region.
pub fn counterfactual_view(
    ctx: CallContext,
    patch: &Patch,
    region: &InpaintRegion,
    fore: &Label,
    back: &Label,
    task_prompt: &str,
    inpainter: &dyn Inpainter,
) -> Result<Image> {
    let view = &patch.view;
    if region.region.dims() != view.dims() {
        return Err(Error::DimensionMismatch {
            expected: view.dims(),
            actual: region.region.dims(),
        });
    }
    let out = inpainter.inpaint(
        ctx,
        view,
        &region.region,
        &positive_prompt(back),
        &negative_prompt(fore, task_prompt),
    )?;
    if out.dims() != view.dims() {
        return Err(Error::DimensionMismatch {
            expected: view.dims(),
            actual: out.dims(),
        });
    }
    for y in 0..view.height() {
        for x in 0..view.width() {
            if !region.region.get(x, y) && out.pixel(x, y) != view.pixel(x, y) {
                return Err(Error::Invalid(format!(
                    "inpainter modified pixel ({x}, {y}) outside the region of patch {}",
                    patch.patch_id
                )));
            }
        }
    }
    Ok(out)
}

/// Signed per-label score drop of one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffVector {
    pub entries: Vec<(Label, f64)>,
    pub patch_id: usize,
    pub iteration: usize,
}

impl DiffVector {
    pub fn zeros(vocabulary: &[Label], patch_id: usize, iteration: usize) -> Self {
        Self {
            entries: vocabulary.iter().map(|l| (l.clone(), 0.0)).collect(),
            patch_id,
            iteration,
        }
    }
}

/// `orig - masked` per label, in the order of `orig`.
pub fn contrastive_diffs(
    orig: &ScoredVocabulary,
    masked: &ScoredVocabulary,
    patch_id: usize,
    iteration: usize,
) -> Result<DiffVector> {
    if orig.entries().len() != masked.entries().len() {
        return Err(Error::LabelMismatch(format!(
            "{} vs {} labels",
            orig.entries().len(),
            masked.entries().len()
        )));
    }
    let entries = orig
        .entries()
        .iter()
        .map(|(label, o)| {
            masked
                .get(label)
                .map(|m| (label.clone(), o - m))
                .ok_or_else(|| Error::LabelMismatch(format!("{label} missing from masked scores")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiffVector {
        entries,
        patch_id,
        iteration,
    })
}

fn first_argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Label with the largest drop in one patch; the first one wins ties.
pub fn patch_pick(diff: &DiffVector) -> Result<(Label, f64)> {
    let i = first_argmax(diff.entries.iter().map(|(_, v)| *v)).ok_or(Error::Empty("diff vector"))?;
    Ok(diff.entries[i].clone())
}

/// Per label, the largest clamped drop over all patches.
pub fn iteration_scores(diffs: &[DiffVector], clamp_negative: bool) -> Result<Vec<(Label, f64)>> {
    let first = diffs.first().ok_or(Error::Empty("diff vectors"))?;
    let labels: Vec<&Label> = first.entries.iter().map(|(l, _)| l).collect();
    let mut best = vec![f64::NEG_INFINITY; labels.len()];
    for d in diffs {
        if d.entries.len() != labels.len() || d.entries.iter().zip(&labels).any(|((l, _), e)| l != *e) {
            return Err(Error::LabelMismatch(format!(
                "patch {} scored a different vocabulary",
                d.patch_id
            )));
        }
        for (b, (_, v)) in best.iter_mut().zip(&d.entries) {
            *b = b.max(*v);
        }
    }
    if clamp_negative {
        best.iter_mut().for_each(|b| *b = b.max(0.0));
    } else {
        let min = best.iter().copied().fold(f64::INFINITY, f64::min);
        if min < 0.0 {
            best.iter_mut().for_each(|b| *b -= min);
        }
    }
    Ok(labels.into_iter().cloned().zip(best).collect())
}

/// Divides by the sum; an all-zero vector becomes uniform.
pub fn normalize_scores(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("score vector"));
    }
    if let Some(&value) = v.iter().find(|x| x.is_nan() || **x < 0.0) {
        return Err(Error::OutOfRange {
            what: "score to normalize",
            value,
        });
    }
    let sum: f64 = v.iter().sum();
    Ok(if sum > 0.0 {
        v.iter().map(|x| x / sum).collect()
    } else {
        vec![1.0 / v.len() as f64; v.len()]
    })
}

/// Running record of per-iteration scores and their cumulative product.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreLedger {
    vocabulary: Vec<Label>,
    per_iteration_raw: Vec<Vec<(Label, f64)>>,
    effective: Vec<f64>,
    cumulative: Vec<f64>,
    #[serde(skip)]
    config: MiningConfig,
}

impl ScoreLedger {
    pub fn new(config: MiningConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }

    pub fn vocabulary(&self) -> &[Label] {
        &self.vocabulary
    }

    pub fn per_iteration_raw(&self) -> &[Vec<(Label, f64)>] {
        &self.per_iteration_raw
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Unnormalized product of the latest iteration.
    pub fn effective(&self) -> &[f64] {
        &self.effective
    }

    pub fn iteration_count(&self) -> usize {
        self.per_iteration_raw.len()
    }

    pub fn cumulative_of(&self, label: &Label) -> Option<f64> {
        self.vocabulary
            .iter()
            .position(|l| l == label)
            .map(|i| self.cumulative[i])
    }

    /// Folds one iteration's non-negative scores into the ledger.
    ///
    /// The new effective vector is the raw vector times the normalized
    /// previous effective vector. Labels seen for the first time get the
    /// uniform prior `1 / |vocabulary|`; known labels missing from `raw`
    /// score zero this iteration.
    pub fn progressive_update(&mut self, raw: &[(Label, f64)]) -> Result<()> {
        if let Some(&(_, value)) = raw.iter().find(|(_, v)| v.is_nan() || *v < 0.0) {
            return Err(Error::OutOfRange {
                what: "ledger raw score",
                value,
            });
        }
        let known = self.vocabulary.len();
        for (l, _) in raw {
            if !self.vocabulary.contains(l) {
                self.vocabulary.push(l.clone());
            }
        }
        if self.vocabulary.is_empty() {
            return Err(Error::Empty("ledger vocabulary"));
        }
        let n = self.vocabulary.len();
        let aligned: Vec<f64> = self
            .vocabulary
            .iter()
            .map(|l| {
                let v = raw.iter().find(|(r, _)| r == l).map_or(0.0, |(_, v)| *v);
                v.max(self.config.ledger_floor)
            })
            .collect();

        let effective = if self.per_iteration_raw.is_empty() {
            let prior = vec![1.0 / n as f64; n];
            self.resolve_zero_sum(aligned, &prior)
        } else {
            let mut prior = normalize_scores(&self.effective[..known])?;
            prior.resize(n, 1.0 / n as f64);
            if prior.len() != aligned.len() {
                return Err(Error::LabelMismatch("ledger alignment failed".into()));
            }
            let product = aligned.iter().zip(&prior).map(|(r, p)| r * p).collect();
            self.resolve_zero_sum(product, &prior)
        };
        self.cumulative = normalize_scores(&effective)?;
        self.effective = effective;
        self.per_iteration_raw.push(
            self.vocabulary
                .iter()
                .cloned()
                .zip(
                    self.vocabulary
                        .iter()
                        .map(|l| raw.iter().find(|(r, _)| r == l).map_or(0.0, |(_, v)| *v)),
                )
                .collect(),
        );
        Ok(())
    }

    fn resolve_zero_sum(&self, effective: Vec<f64>, prior: &[f64]) -> Vec<f64> {
        let all_zero = effective.iter().all(|&v| v == 0.0);
        match self.config.zero_sum_policy {
            ZeroSumPolicy::Carry if all_zero => prior.to_vec(),
            _ => effective,
        }
    }

    /// Label with the largest cumulative score; vocabulary order breaks ties.
    pub fn select_prompt(&self) -> Result<Label> {
        if self.per_iteration_raw.is_empty() {
            return Err(Error::Empty("ledger has no iterations"));
        }
        let max = self.cumulative.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cutoff = max - TIE_TOLERANCE * max.abs();
        let i = self
            .cumulative
            .iter()
            .position(|&v| v >= cutoff)
            .expect("non-empty cumulative vector");
        Ok(self.vocabulary[i].clone())
    }
}
