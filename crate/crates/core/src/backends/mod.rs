//! Model contracts consumed by the pipeline.
//!
//! Five roles: a prompting VLM, an inpainter, an open-vocabulary detector,
//! a promptable mask generator and a text-image semantic scorer. Every call
//! carries a [`CallContext`] so seeded implementations can vary their
//! behaviour per iteration and patch while staying reproducible; real
//! adapters are free to ignore it.

mod sim;
mod stub;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BBox, BinaryMask, Image, SoftMask};

pub use sim::{
    is_target_pixel, Distractor, ScenarioParams, SimulatedWorld, TargetShape, WorldConfig,
    BACKGROUND_RGB, TARGET_RGB,
};
pub use stub::StubAdapter;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("adapter not configured: {0}")]
    NotConfigured(&'static str),
    #[error("invalid backend input: {0}")]
    InvalidInput(String),
    #[error("backend failed: {0}")]
    Failed(String),
}

/// Canonical label: non-empty, trimmed, lowercase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(String);

impl Label {
    pub fn new(text: impl Into<String>) -> Result<Self, crate::Error> {
        let text = text.into();
        let ok = !text.is_empty()
            && text.trim() == text
            && !text.chars().any(char::is_uppercase);
        if ok {
            Ok(Label(text))
        } else {
            Err(crate::Error::InvalidLabel(text))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Label {
    type Error = crate::Error;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Label::new(value)
    }
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        l.0
    }
}

/// Softmax-normalized scores over an ordered vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredVocabulary {
    entries: Vec<(Label, f64)>,
}

impl ScoredVocabulary {
    pub fn new(entries: Vec<(Label, f64)>) -> Result<Self, crate::Error> {
        if entries.is_empty() {
            return Err(crate::Error::Empty("scored vocabulary"));
        }
        if let Some(&(_, v)) = entries.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(crate::Error::OutOfRange {
                what: "vocabulary score",
                value: v,
            });
        }
        let sum: f64 = entries.iter().map(|(_, v)| v).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(crate::Error::OutOfRange {
                what: "vocabulary score sum",
                value: sum,
            });
        }
        Ok(Self { entries })
    }

    /// Softmax of `logits`, paired with `labels` in order.
    pub fn softmax(labels: &[Label], logits: &[f64]) -> Result<Self, crate::Error> {
        if labels.len() != logits.len() {
            return Err(crate::Error::LabelMismatch(format!(
                "{} labels for {} logits",
                labels.len(),
                logits.len()
            )));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self::new(
            labels
                .iter()
                .cloned()
                .zip(exps.iter().map(|e| e / total))
                .collect(),
        )
    }

    pub fn entries(&self) -> &[(Label, f64)] {
        &self.entries
    }

    pub fn get(&self, label: &Label) -> Option<f64> {
        self.entries.iter().find(|(l, _)| l == label).map(|(_, v)| *v)
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.entries.iter().map(|(l, _)| l)
    }
}

/// Which view of a patch a score query is made on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Probe {
    #[default]
    Original,
    Counterfactual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CallContext {
    pub iteration: usize,
    pub patch_id: usize,
    pub probe: Probe,
}

impl CallContext {
    pub fn new(iteration: usize, patch_id: usize) -> Self {
        Self {
            iteration,
            patch_id,
            probe: Probe::Original,
        }
    }

    pub fn counterfactual(self) -> Self {
        Self {
            probe: Probe::Counterfactual,
            ..self
        }
    }
}

/// Raw foreground/background answer, before canonicalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameAnswer {
    pub fore: String,
    pub back: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
}

pub trait PromptingVlm: Send + Sync {
    fn caption(&self, ctx: CallContext, view: &Image) -> Result<String, BackendError>;

    fn name_query(
        &self,
        ctx: CallContext,
        view: &Image,
        caption: &str,
        prompt: &str,
    ) -> Result<NameAnswer, BackendError>;

    /// Boxes in view coordinates.
    fn box_query(
        &self,
        ctx: CallContext,
        view: &Image,
        caption: &str,
        prompt: &str,
    ) -> Result<Vec<BBox>, BackendError>;

    /// Must be deterministic for identical inputs and context.
    fn score_query(
        &self,
        ctx: CallContext,
        view: &Image,
        vocabulary: &[Label],
    ) -> Result<ScoredVocabulary, BackendError>;
}

pub trait Inpainter: Send + Sync {
    /// Pixels outside `region` must come back bit-identical.
    fn inpaint(
        &self,
        ctx: CallContext,
        view: &Image,
        region: &BinaryMask,
        positive_prompt: &str,
        negative_prompt: &str,
    ) -> Result<Image, BackendError>;
}

pub trait Detector: Send + Sync {
    fn detect(
        &self,
        ctx: CallContext,
        view: &Image,
        label: &Label,
    ) -> Result<Vec<Detection>, BackendError>;
}

pub trait MaskGenerator: Send + Sync {
    /// Output has the dimensions of `view`.
    fn segment(
        &self,
        ctx: CallContext,
        view: &Image,
        points: &[(usize, usize)],
        bbox: BBox,
    ) -> Result<SoftMask, BackendError>;
}

pub trait SemanticScorer: Send + Sync {
    /// Text-image similarity in `[0, 1]`.
    fn similarity(&self, ctx: CallContext, view: &Image, label: &Label) -> Result<f64, BackendError>;

    fn heatmap(&self, ctx: CallContext, view: &Image, label: &Label)
        -> Result<SoftMask, BackendError>;
}

/// The full set of model backends one pipeline run uses.
#[derive(Clone)]
pub struct Backends {
    pub vlm: Arc<dyn PromptingVlm>,
    pub inpainter: Arc<dyn Inpainter>,
    pub detector: Arc<dyn Detector>,
    pub mask_generator: Arc<dyn MaskGenerator>,
    pub scorer: Arc<dyn SemanticScorer>,
}

impl Backends {
    pub fn simulated(world: SimulatedWorld) -> Self {
        let world = Arc::new(world);
        Self {
            vlm: world.clone(),
            inpainter: world.clone(),
            detector: world.clone(),
            mask_generator: world.clone(),
            scorer: world,
        }
    }

    pub fn stub() -> Self {
        let stub = Arc::new(StubAdapter);
        Self {
            vlm: stub.clone(),
            inpainter: stub.clone(),
            detector: stub.clone(),
            mask_generator: stub.clone(),
            scorer: stub,
        }
    }
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends").finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_validation() {
        assert!(Label::new("frog").is_ok());
        assert!(Label::new("tree trunk").is_ok());
        assert!(Label::new("").is_err());
        assert!(Label::new(" frog").is_err());
        assert!(Label::new("Frog").is_err());
    }

    #[test]
    fn softmax_vocabulary() {
        let labels = vec![Label::new("a").unwrap(), Label::new("b").unwrap()];
        let v = ScoredVocabulary::softmax(&labels, &[0.0, 0.0]).unwrap();
        assert_eq!(v.entries()[0].1, 0.5);
        let single = ScoredVocabulary::softmax(&labels[..1], &[3.7]).unwrap();
        assert_eq!(single.entries()[0].1, 1.0);
        assert!(ScoredVocabulary::new(vec![]).is_err());
        assert!(ScoredVocabulary::new(vec![(labels[0].clone(), 0.7)]).is_err());
    }

    #[test]
    fn stub_reports_not_configured() {
        let b = Backends::stub();
        let img = Image::filled(4, 4, [0.5; 3]).unwrap();
        let ctx = CallContext::new(1, 0);
        let err = b.vlm.caption(ctx, &img).unwrap_err();
        assert!(matches!(err, BackendError::NotConfigured(_)));
        assert!(err.to_string().contains("adapter not configured"));
        let label = Label::new("frog").unwrap();
        assert!(b.detector.detect(ctx, &img, &label).is_err());
        assert!(b.scorer.heatmap(ctx, &img, &label).is_err());
        let region = BinaryMask::empty(4, 4).unwrap();
        assert!(b.inpainter.inpaint(ctx, &img, &region, "", "").is_err());
        assert!(b.mask_generator.segment(ctx, &img, &[], BBox::full(4, 4)).is_err());
    }
}
