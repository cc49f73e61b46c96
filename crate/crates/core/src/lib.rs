//! Task-generic promptable segmentation driven by counterfactual negative
//! mining.
//!
//! One coarse task prompt ("camouflaged animal") is turned into a per-image
//! instance label by querying a vision-language model on multi-scale
//! patches, occluding each hypothesis with an inpainter and measuring how
//! much the model's score for every candidate drops. Drops are normalized
//! and multiplied across iterations so that labels that respond
//! consistently win over ones that flicker. The selected label then drives
//! detection, point-prompted segmentation and similarity-weighted mask
//! aggregation; the mask is blended back into the image for the next
//! iteration and the final mask is the one closest to the mean of all
//! iterations.
//!
//! Every model sits behind the traits in [`backends`]. [`backends::SimulatedWorld`]
//! implements all of them over a seeded synthetic scene.

pub mod backends;
pub mod candidates;
pub mod config;
mod error;
pub mod masks;
pub mod metrics;
pub mod mining;
pub mod model;
pub mod patching;
pub mod pipeline;

pub use backends::{Backends, Label, ScoredVocabulary};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use model::{apply_mask, binarize, mask_l1_distance, BBox, BinaryMask, Image, SoftMask};
pub use patching::{build_patch_set, Patch, PatchScheme, PatchSet};
pub use pipeline::{run_pipeline, PipelineResult};
