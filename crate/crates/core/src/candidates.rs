//! Per-patch VLM queries that produce candidate labels and boxes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::backends::{CallContext, Label, PromptingVlm};
use crate::error::{Error, Result};
use crate::model::BBox;
use crate::patching::{patch_to_global, Patch, PatchSet};

pub const DEFAULT_BOX_TEMPLATE: &str =
    "This image pertains to the {task} detection task, output the bounding box of the {task}.";
pub const DEFAULT_NAME_TEMPLATE: &str =
    "Output the name of the {task} and its environment in one word.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub box_template: String,
    pub name_template: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            box_template: DEFAULT_BOX_TEMPLATE.to_string(),
            name_template: DEFAULT_NAME_TEMPLATE.to_string(),
        }
    }
}

pub fn render_template(template: &str, task: &str) -> String {
    template.replace("{task}", task)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePrompt {
    pub fore: Label,
    pub back: Label,
    /// Canvas coordinates.
    pub boxes: Vec<BBox>,
    pub source_patch: usize,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateSet {
    pub iteration: usize,
    pub candidates: Vec<CandidatePrompt>,
    /// Deduplicated foreground labels, first-seen order.
    pub vocabulary: Vec<Label>,
    /// Patches whose queries failed, with the error text.
    pub skipped: Vec<(usize, String)>,
}

impl CandidateSet {
    /// Candidates produced in this set's own iteration by `patch_id`.
    pub fn for_patch(&self, patch_id: usize) -> impl Iterator<Item = &CandidatePrompt> {
        self.candidates
            .iter()
            .filter(move |c| c.source_patch == patch_id && c.iteration == self.iteration)
    }
}

/// Lowercases, trims, collapses inner whitespace and strips trailing
/// punctuation.
pub fn canonicalize_label(raw: &str) -> Result<Label> {
    let collapsed = raw
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let stripped = collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .trim();
    if stripped.is_empty() {
        return Err(Error::InvalidLabel(raw.to_string()));
    }
    Label::new(stripped)
}

fn query_patch(
    patch: &Patch,
    box_prompt: &str,
    name_prompt: &str,
    vlm: &dyn PromptingVlm,
    iteration: usize,
) -> Result<CandidatePrompt> {
    let ctx = CallContext::new(iteration, patch.patch_id);
    let caption = vlm.caption(ctx, &patch.view)?;
    let raw_boxes = vlm.box_query(ctx, &patch.view, &caption, box_prompt)?;
    let names = vlm.name_query(ctx, &patch.view, &caption, name_prompt)?;
    let fore = canonicalize_label(&names.fore)?;
    let back = canonicalize_label(&names.back)?;
    let view_box = BBox::full(patch.view.width(), patch.view.height());
    let boxes = raw_boxes
        .iter()
        .filter_map(|b| b.intersect(&view_box))
        .map(|b| patch_to_global(b, patch))
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidatePrompt {
        fore,
        back,
        boxes,
        source_patch: patch.patch_id,
        iteration,
    })
}

/// Queries every patch for a box and a foreground/background name pair.
/// Failed patches are skipped; the call fails only if every patch fails.
pub fn generate_candidates(
    patchset: &PatchSet,
    task_prompt: &str,
    templates: &PromptTemplates,
    vlm: &dyn PromptingVlm,
    iteration: usize,
) -> Result<CandidateSet> {
    if patchset.is_empty() {
        return Err(Error::Empty("patch set"));
    }
    let box_prompt = render_template(&templates.box_template, task_prompt);
    let name_prompt = render_template(&templates.name_template, task_prompt);
    let results: Vec<_> = patchset
        .patches
        .par_iter()
        .map(|p| (p.patch_id, query_patch(p, &box_prompt, &name_prompt, vlm, iteration)))
        .collect();

    let mut set = CandidateSet {
        iteration,
        ..Default::default()
    };
    for (patch_id, result) in results {
        match result {
            Ok(c) => {
                if !set.vocabulary.contains(&c.fore) {
                    set.vocabulary.push(c.fore.clone());
                }
                set.candidates.push(c);
            }
            Err(e) => {
                debug!(patch_id, error = %e, "candidate query failed");
                set.skipped.push((patch_id, e.to_string()));
            }
        }
    }
    if set.candidates.is_empty() {
        return Err(Error::AllPatchesFailed {
            stage: "candidate generation",
            count: patchset.len(),
            last: set.skipped.last().map(|s| s.1.clone()).unwrap_or_default(),
        });
    }
    Ok(set)
}

/// Ordered union with labels carried from earlier iterations first.
pub fn merge_candidates(current: &CandidateSet, carry: Option<&CandidateSet>) -> CandidateSet {
    let Some(carry) = carry else {
        return current.clone();
    };
    let mut vocabulary = carry.vocabulary.clone();
    for l in &current.vocabulary {
        if !vocabulary.contains(l) {
            vocabulary.push(l.clone());
        }
    }
    CandidateSet {
        iteration: current.iteration,
        candidates: carry
            .candidates
            .iter()
            .chain(&current.candidates)
            .cloned()
            .collect(),
        vocabulary,
        skipped: current.skipped.clone(),
    }
}
