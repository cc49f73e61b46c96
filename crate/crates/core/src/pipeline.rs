//! The outer loop: candidates, mining, masks, blend, repeat; then pick the
//! iteration whose mask is closest to the mean of all of them.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;
use tracing::{debug, info};

use crate::backends::{Backends, CallContext, Label};
use crate::candidates::{generate_candidates, merge_candidates, CandidatePrompt, CandidateSet};
use crate::config::{CandidatePolicy, PipelineConfig};
use crate::error::{Error, Result};
use crate::masks::{generate_iteration_mask, PatchMaskRecord};
use crate::mining::{
    build_inpaint_region, contrastive_diffs, counterfactual_view, iteration_scores, DiffVector,
    RegionSource, ScoreLedger,
};
use crate::model::{binarize, mask_l1_distance, Image, SoftMask};
use crate::patching::{build_patch_set, Patch};

pub const DEFAULT_TASK_PROMPT: &str = "camouflaged animal";

/// `w * (x * m) + (1 - w) * x` per pixel and channel, evaluated as
/// `x * (1 - w * (1 - m))` so that `m = 1` and `w = 0` return `x` exactly.
pub fn blend_image(image: &Image, mask: &SoftMask, w: f64) -> Result<Image> {
    if image.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: image.dims(),
            actual: mask.dims(),
        });
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::OutOfRange {
            what: "blend weight",
            value: w,
        });
    }
    let data = image
        .data()
        .chunks_exact(3)
        .zip(mask.data())
        .flat_map(|(px, &m)| {
            let keep = 1.0 - w * (1.0 - m);
            px.iter().map(move |&x| x * keep)
        })
        .collect();
    Image::new(image.width(), image.height(), data)
}

/// Index (1-based) and mask of the history entry with the smallest mean
/// absolute distance to the pixelwise mean. The earliest entry wins ties.
pub fn select_final_mask(history: &[SoftMask]) -> Result<(usize, SoftMask)> {
    let first = history.first().ok_or(Error::Empty("mask history"))?;
    let (w, h) = first.dims();
    let mut sum = vec![0.0; w * h];
    for m in history {
        if m.dims() != (w, h) {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                actual: m.dims(),
            });
        }
        for (s, v) in sum.iter_mut().zip(m.data()) {
            *s += v;
        }
    }
    let n = history.len() as f64;
    let mean = SoftMask::new(w, h, sum.into_iter().map(|s| (s / n).clamp(0.0, 1.0)).collect())?;
    let mut best = (0, f64::INFINITY);
    for (i, m) in history.iter().enumerate() {
        let d = mask_l1_distance(m, &mean)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok((best.0 + 1, history[best.0].clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PatchRegion {
    pub patch_id: usize,
    /// `None` when the patch had nothing to erase.
    pub source: Option<RegionSource>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// X_i, the image this iteration worked on.
    pub input: Image,
    /// Candidates scored this iteration, including carried ones.
    pub candidates: CandidateSet,
    pub regions: Vec<PatchRegion>,
    pub diffs: Vec<DiffVector>,
    pub iteration_scores: Vec<(Label, f64)>,
    pub ledger: ScoreLedger,
    pub selected: Label,
    pub mask_records: Vec<PatchMaskRecord>,
    pub mask: SoftMask,
    /// (stage, patch id, error) for every patch that was skipped.
    pub skipped: Vec<(&'static str, usize, String)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub candidates: Duration,
    pub mining: Duration,
    pub masks: Duration,
    pub blend: Duration,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub final_mask: SoftMask,
    /// 1-based index of the chosen iteration.
    pub chosen_iteration: usize,
    pub history: Vec<IterationRecord>,
    /// Wall-clock per iteration. Not part of equality.
    pub timings: Vec<StageTimings>,
}

impl PartialEq for PipelineResult {
    fn eq(&self, other: &Self) -> bool {
        self.final_mask == other.final_mask
            && self.chosen_iteration == other.chosen_iteration
            && self.history == other.history
    }
}

impl PipelineResult {
    /// Label selected by the last iteration.
    pub fn final_label(&self) -> &Label {
        &self.history.last().expect("at least one iteration").selected
    }

    pub fn selected_labels(&self) -> Vec<&Label> {
        self.history.iter().map(|r| &r.selected).collect()
    }

    /// Final mask as if the run had stopped after `iterations`.
    pub fn truncated(&self, iterations: usize) -> Result<(usize, SoftMask)> {
        let n = iterations.min(self.history.len());
        let masks: Vec<SoftMask> = self.history[..n].iter().map(|r| r.mask.clone()).collect();
        select_final_mask(&masks)
    }
}

#[derive(Debug, Error)]
#[error("pipeline aborted in iteration {iteration}: {source}")]
pub struct PipelineError {
    pub iteration: usize,
    #[source]
    pub source: Error,
    /// Iterations that completed before the failure.
    pub history: Vec<IterationRecord>,
}

/// Everything an iteration needs from the ones before it.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub iteration: usize,
    pub image: Image,
    pub ledger: ScoreLedger,
    pub carry: Option<CandidateSet>,
    pub previous_mask: Option<SoftMask>,
}

impl PipelineState {
    pub fn new(image: Image, config: &PipelineConfig) -> Self {
        Self {
            iteration: 1,
            image,
            ledger: ScoreLedger::new(config.mining),
            carry: None,
            previous_mask: None,
        }
    }
}

fn inpaint_candidate(current: &CandidateSet, patch_id: usize) -> Option<&CandidatePrompt> {
    current
        .for_patch(patch_id)
        .next()
        .or_else(|| current.candidates.first())
}

#[allow(clippy::too_many_arguments)]
fn mine_patch(
    patch: &Patch,
    vocabulary: &[Label],
    current: &CandidateSet,
    previous_mask: Option<&SoftMask>,
    task_prompt: &str,
    backends: &Backends,
    config: &PipelineConfig,
    iteration: usize,
) -> Result<(DiffVector, PatchRegion)> {
    let ctx = CallContext::new(iteration, patch.patch_id);
    let candidate = inpaint_candidate(current, patch.patch_id).ok_or(Error::Empty("candidates"))?;
    let region = build_inpaint_region(patch, previous_mask, candidate, config.region_threshold)?;
    let Some(region) = region else {
        return Ok((
            DiffVector::zeros(vocabulary, patch.patch_id, iteration),
            PatchRegion {
                patch_id: patch.patch_id,
                source: None,
            },
        ));
    };
    let original = backends.vlm.score_query(ctx, &patch.view, vocabulary)?;
    let cf_ctx = ctx.counterfactual();
    let erased = counterfactual_view(
        cf_ctx,
        patch,
        &region,
        &candidate.fore,
        &candidate.back,
        task_prompt,
        backends.inpainter.as_ref(),
    )?;
    let masked = backends.vlm.score_query(cf_ctx, &erased, vocabulary)?;
    let diff = contrastive_diffs(&original, &masked, patch.patch_id, iteration)?;
    Ok((
        diff,
        PatchRegion {
            patch_id: patch.patch_id,
            source: Some(region.provenance),
        },
    ))
}

/// One full iteration on `state`. The state is not modified; see
/// [`advance`] for the transition to the next iteration.
pub fn run_iteration(
    state: &PipelineState,
    backends: &Backends,
    config: &PipelineConfig,
) -> Result<(IterationRecord, StageTimings)> {
    let i = state.iteration;
    let task_prompt = config.task_prompt_or(DEFAULT_TASK_PROMPT);
    let mut timings = StageTimings::default();
    let mut skipped = Vec::new();

    let clock = Instant::now();
    let patchset = build_patch_set(&state.image, config.patch_scheme).map_err(Error::at("patching"))?;
    let current = generate_candidates(&patchset, task_prompt, &config.templates, backends.vlm.as_ref(), i)
        .map_err(Error::at("candidate generation"))?;
    skipped.extend(current.skipped.iter().map(|(p, e)| ("candidate generation", *p, e.clone())));
    let merged = match config.candidate_policy {
        CandidatePolicy::Accumulate => merge_candidates(&current, state.carry.as_ref()),
        CandidatePolicy::Reset => current.clone(),
    };
    timings.candidates = clock.elapsed();

    let clock = Instant::now();
    let vocabulary = merged.vocabulary.clone();
    let mined: Vec<_> = patchset
        .patches
        .par_iter()
        .map(|p| {
            let r = mine_patch(p, &vocabulary, &current, state.previous_mask.as_ref(), task_prompt, backends, config, i);
            (p.patch_id, r)
        })
        .collect();
    let mut diffs = Vec::new();
    let mut regions = Vec::new();
    for (patch_id, r) in mined {
        match r {
            Ok((d, region)) => {
                diffs.push(d);
                regions.push(region);
            }
            Err(e) => skipped.push(("negative mining", patch_id, e.to_string())),
        }
    }
    if diffs.is_empty() {
        return Err(Error::Stage {
            stage: "negative mining",
            source: Box::new(Error::AllPatchesFailed {
                stage: "negative mining",
                count: patchset.len(),
                last: skipped.last().map(|s| s.2.clone()).unwrap_or_default(),
            }),
        });
    }
    let scores = iteration_scores(&diffs, config.mining.clamp_negative).map_err(Error::at("negative mining"))?;
    let mut ledger = state.ledger.clone();
    ledger.progressive_update(&scores).map_err(Error::at("negative mining"))?;
    let selected = ledger.select_prompt().map_err(Error::at("negative mining"))?;
    timings.mining = clock.elapsed();
    debug!(iteration = i, %selected, "prompt selected");

    let clock = Instant::now();
    let stage = generate_iteration_mask(
        &patchset,
        &state.image,
        &selected,
        backends,
        config.n_points,
        config.similarity_threshold,
        i,
    )
    .map_err(Error::at("mask generation"))?;
    skipped.extend(stage.skipped.iter().map(|(p, e)| ("mask generation", *p, e.clone())));
    timings.masks = clock.elapsed();

    Ok((
        IterationRecord {
            iteration: i,
            input: state.image.clone(),
            candidates: merged,
            regions,
            diffs,
            iteration_scores: scores,
            ledger,
            selected,
            mask_records: stage.records,
            mask: stage.mask,
            skipped,
        },
        timings,
    ))
}

/// State for the iteration after `record`: blended image, updated ledger,
/// carried candidates and the previous mask (dropped when empty).
pub fn advance(state: &PipelineState, record: &IterationRecord, config: &PipelineConfig) -> Result<PipelineState> {
    let image = blend_image(&state.image, &record.mask, config.blend_weight)?;
    let has_region = !binarize(&record.mask, config.region_threshold).is_empty();
    Ok(PipelineState {
        iteration: state.iteration + 1,
        image,
        ledger: record.ledger.clone(),
        carry: Some(record.candidates.clone()),
        previous_mask: has_region.then(|| record.mask.clone()),
    })
}

pub fn run_pipeline(
    image: &Image,
    config: &PipelineConfig,
    backends: &Backends,
) -> Result<PipelineResult, PipelineError> {
    let fail = |iteration, source, history| PipelineError {
        iteration,
        source,
        history,
    };
    config.validate().map_err(|e| fail(0, e, Vec::new()))?;
    let started = Instant::now();
    let mut state = PipelineState::new(image.clone(), config);
    let mut history: Vec<IterationRecord> = Vec::with_capacity(config.iterations);
    let mut timings = Vec::with_capacity(config.iterations);
    for i in 1..=config.iterations {
        if let Some(limit) = config.max_wall_clock {
            let elapsed = started.elapsed();
            if elapsed > limit {
                let e = Error::Timeout {
                    limit_secs: limit.as_secs_f64(),
                    elapsed_secs: elapsed.as_secs_f64(),
                };
                return Err(fail(i, e, history));
            }
        }
        let (record, mut t) = match run_iteration(&state, backends, config) {
            Ok(r) => r,
            Err(e) => return Err(fail(i, e, history)),
        };
        if i < config.iterations {
            let clock = Instant::now();
            match advance(&state, &record, config) {
                Ok(next) => state = next,
                Err(e) => return Err(fail(i, Error::at("blend")(e), history)),
            }
            t.blend = clock.elapsed();
        }
        history.push(record);
        timings.push(t);
    }
    let masks: Vec<SoftMask> = history.iter().map(|r| r.mask.clone()).collect();
    let (chosen_iteration, final_mask) =
        select_final_mask(&masks).map_err(|e| fail(config.iterations, e, Vec::new()))?;
    info!(chosen_iteration, label = %history.last().map(|r| r.selected.to_string()).unwrap_or_default(), "pipeline finished");
    Ok(PipelineResult {
        final_mask,
        chosen_iteration,
        history,
        timings,
    })
}
