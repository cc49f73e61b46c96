use super::{
    BackendError, CallContext, Detection, Detector, Inpainter, Label, MaskGenerator, NameAnswer,
    PromptingVlm, ScoredVocabulary, SemanticScorer,
};
use crate::model::{BBox, BinaryMask, Image, SoftMask};

/// Placeholder for real model adapters. Every call fails with
/// [`BackendError::NotConfigured`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StubAdapter;

impl PromptingVlm for StubAdapter {
    fn caption(&self, _: CallContext, _: &Image) -> Result<String, BackendError> {
        Err(BackendError::NotConfigured("vlm"))
    }

    fn name_query(&self, _: CallContext, _: &Image, _: &str, _: &str) -> Result<NameAnswer, BackendError> {
        Err(BackendError::NotConfigured("vlm"))
    }

    fn box_query(&self, _: CallContext, _: &Image, _: &str, _: &str) -> Result<Vec<BBox>, BackendError> {
        Err(BackendError::NotConfigured("vlm"))
    }

    fn score_query(&self, _: CallContext, _: &Image, _: &[Label]) -> Result<ScoredVocabulary, BackendError> {
        Err(BackendError::NotConfigured("vlm"))
    }
}

impl Inpainter for StubAdapter {
    fn inpaint(
        &self,
        _: CallContext,
        _: &Image,
        _: &BinaryMask,
        _: &str,
        _: &str,
    ) -> Result<Image, BackendError> {
        Err(BackendError::NotConfigured("inpainter"))
    }
}

impl Detector for StubAdapter {
    fn detect(&self, _: CallContext, _: &Image, _: &Label) -> Result<Vec<Detection>, BackendError> {
        Err(BackendError::NotConfigured("detector"))
    }
}

impl MaskGenerator for StubAdapter {
    fn segment(&self, _: CallContext, _: &Image, _: &[(usize, usize)], _: BBox) -> Result<SoftMask, BackendError> {
        Err(BackendError::NotConfigured("mask generator"))
    }
}

impl SemanticScorer for StubAdapter {
    fn similarity(&self, _: CallContext, _: &Image, _: &Label) -> Result<f64, BackendError> {
        Err(BackendError::NotConfigured("semantic scorer"))
    }

    fn heatmap(&self, _: CallContext, _: &Image, _: &Label) -> Result<SoftMask, BackendError> {
        Err(BackendError::NotConfigured("semantic scorer"))
    }
}
