//! File-level harness around `promptmine-core`: configuration and dataset
//! loading, mask I/O and the `run`, `evaluate` and `simulate` commands.

pub mod dataset;
pub mod evaluate;
pub mod io;
pub mod report;
pub mod run;
pub mod simulate;

use std::path::Path;

use anyhow::Context;
use promptmine_core::PipelineConfig;

pub use dataset::{load_dataset, DatasetEntry, DatasetManifest};
pub use evaluate::{cmd_evaluate, EvaluationOutcome};
pub use run::{cmd_run, RunOutcome};
pub use simulate::{cmd_simulate, SimulationReport};

/// Reads a flat `key=value` config file.
pub fn load_config(path: &Path) -> anyhow::Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    PipelineConfig::parse(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// FNV-1a over the bytes of `s`; used to derive per-image seeds from ids.
pub(crate) fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}
