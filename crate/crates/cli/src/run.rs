use std::path::Path;

use anyhow::{bail, Context, Result};
use promptmine_core::backends::{SimulatedWorld, WorldConfig};
use promptmine_core::config::BackendKind;
use promptmine_core::{run_pipeline, Backends, Image, PipelineConfig, PipelineResult};
use rayon::prelude::*;
use serde::Serialize;
use tracing::{info, warn};

use crate::dataset::{DatasetEntry, DatasetManifest};
use crate::io::{read_image, write_mask, write_text};
use crate::report::to_json;
use crate::stable_hash;

pub const RUN_REPORT: &str = "run_report.json";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunOutcome {
    pub succeeded: Vec<String>,
    /// (id, error) sorted by id.
    pub failed: Vec<(String, String)>,
}

impl RunOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failed.is_empty()
    }
}

#[derive(Serialize)]
struct IterationSummary<'a> {
    iteration: usize,
    selected: &'a str,
    vocabulary: Vec<&'a str>,
    cumulative: &'a [f64],
    mask_mean: f64,
    skipped_patches: usize,
}

#[derive(Serialize)]
struct HistorySummary<'a> {
    id: &'a str,
    chosen_iteration: usize,
    final_label: &'a str,
    selected_labels: Vec<&'a str>,
    iterations: Vec<IterationSummary<'a>>,
}

fn history_json(id: &str, result: &PipelineResult) -> Result<String> {
    let summary = HistorySummary {
        id,
        chosen_iteration: result.chosen_iteration,
        final_label: result.final_label().as_str(),
        selected_labels: result.selected_labels().iter().map(|l| l.as_str()).collect(),
        iterations: result
            .history
            .iter()
            .map(|r| IterationSummary {
                iteration: r.iteration,
                selected: r.selected.as_str(),
                vocabulary: r.ledger.vocabulary().iter().map(|l| l.as_str()).collect(),
                cumulative: r.ledger.cumulative(),
                mask_mean: r.mask.mean(),
                skipped_patches: r.skipped.len(),
            })
            .collect(),
    };
    to_json(&summary)
}

/// Seed of the simulated world attached to image `id`.
pub fn image_seed(config_seed: u64, id: &str) -> u64 {
    config_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ stable_hash(id)
}

/// Backends for one image. The simulated backend adopts the image as its
/// canvas, so it needs pixels carrying the target chroma.
pub fn backends_for(config: &PipelineConfig, id: &str, image: &Image) -> Result<Backends> {
    Ok(match config.backend {
        BackendKind::Stub => Backends::stub(),
        BackendKind::Simulated => {
            let seed = image_seed(config.seed, id);
            let world_config = WorldConfig::random(seed, &config.sim)?;
            Backends::simulated(SimulatedWorld::from_image(image, world_config, seed)?)
        }
    })
}

fn run_one(config: &PipelineConfig, entry: &DatasetEntry, out_dir: &Path) -> Result<()> {
    let image = read_image(&entry.image)?;
    let backends = backends_for(config, &entry.id, &image)?;
    let result = run_pipeline(&image, config, &backends)?;
    write_mask(&out_dir.join(format!("{}_mask.png", entry.id)), &result.final_mask)?;
    write_text(
        &out_dir.join(format!("{}_history.json", entry.id)),
        &history_json(&entry.id, &result)?,
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ImageStatus<'a> {
    id: &'a str,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct RunReport<'a> {
    succeeded: usize,
    failed: usize,
    images: Vec<ImageStatus<'a>>,
}

/// Runs the pipeline on every image with a pool of `workers` threads,
/// writing `<id>_mask.png`, `<id>_history.json` and a run report. Failures
/// are recorded and the remaining images still run.
pub fn cmd_run(
    config: &PipelineConfig,
    manifest: &DatasetManifest,
    out_dir: &Path,
    workers: usize,
) -> Result<RunOutcome> {
    if config.task_prompt.is_none() {
        bail!("config key `task_prompt` is required for run");
    }
    if workers == 0 {
        bail!("worker pool needs at least one thread");
    }
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let results: Vec<(String, Result<()>)> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| (e.id.clone(), run_one(config, e, out_dir)))
            .collect()
    });
    let mut outcome = RunOutcome::default();
    for (id, r) in results {
        match r {
            Ok(()) => {
                info!(%id, "done");
                outcome.succeeded.push(id);
            }
            Err(e) => {
                let msg = format!("{e:#}");
                warn!(%id, error = %msg, "image failed");
                outcome.failed.push((id, msg));
            }
        }
    }
    outcome.succeeded.sort();
    outcome.failed.sort();

    let mut images: Vec<ImageStatus> = outcome
        .succeeded
        .iter()
        .map(|id| ImageStatus { id, status: "ok", error: None })
        .chain(outcome.failed.iter().map(|(id, e)| ImageStatus {
            id,
            status: "failed",
            error: Some(e),
        }))
        .collect();
    images.sort_by(|a, b| a.id.cmp(b.id));
    let report = RunReport {
        succeeded: outcome.succeeded.len(),
        failed: outcome.failed.len(),
        images,
    };
    write_text(&out_dir.join(RUN_REPORT), &to_json(&report)?)?;
    Ok(outcome)
}
