//! Seeded experiment: progressive mining against a single-iteration
//! ablation on randomly drawn simulated worlds.

use anyhow::{bail, Result};
use promptmine_core::backends::{SimulatedWorld, WorldConfig};
use promptmine_core::config::BackendKind;
use promptmine_core::metrics::{mae, mask_iou};
use promptmine_core::{run_pipeline, Backends, PipelineConfig, PipelineResult};
use rayon::prelude::*;
use serde::Serialize;

use crate::report::to_json;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRow {
    pub seed: u64,
    pub target: String,
    pub mining_label: String,
    pub ablation_label: String,
    pub mining_correct: bool,
    pub ablation_correct: bool,
    pub chosen_iteration: usize,
    pub final_iou: f64,
    pub ablation_iou: f64,
    /// MAE of the final mask had the run stopped after 1, 2, ... iterations.
    pub mae_by_iterations: Vec<f64>,
    /// Smallest per-iteration score of the planted label over iterations
    /// whose vocabulary has a competitor; `None` when there were none.
    pub target_min_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub n: usize,
    pub iterations: usize,
    pub mining_accuracy: f64,
    pub ablation_accuracy: f64,
    pub mean_final_iou: f64,
    pub mean_ablation_iou: f64,
    /// Mean MAE over worlds for each truncation length.
    pub mae_trend: Vec<f64>,
    pub rows: Vec<SeedRow>,
}

impl SimulationReport {
    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    /// Fraction of worlds whose final IoU is at least `threshold`.
    pub fn iou_rate(&self, threshold: f64) -> f64 {
        self.rows.iter().filter(|r| r.final_iou >= threshold).count() as f64 / self.n as f64
    }

    pub fn summary(&self) -> String {
        let trend: Vec<String> = self.mae_trend.iter().map(|m| format!("{m:.4}")).collect();
        format!(
            "worlds {}\nmining accuracy {:.3}\nablation accuracy {:.3}\nmean final IoU {:.3}\nmean ablation IoU {:.3}\nM by iterations [{}]\n",
            self.n,
            self.mining_accuracy,
            self.ablation_accuracy,
            self.mean_final_iou,
            self.mean_ablation_iou,
            trend.join(", ")
        )
    }
}

fn target_min_score(result: &PipelineResult, target: &str) -> Option<f64> {
    result
        .history
        .iter()
        .filter(|r| r.iteration_scores.len() > 1)
        .map(|r| {
            r.iteration_scores
                .iter()
                .find(|(l, _)| l.as_str() == target)
                .map_or(0.0, |(_, v)| *v)
        })
        .min_by(f64::total_cmp)
}

/// Runs world `seed` with mining on and with one iteration.
pub fn simulate_world(config: &PipelineConfig, seed: u64) -> Result<SeedRow> {
    let world = SimulatedWorld::new(WorldConfig::random(seed, &config.sim)?, seed)?;
    let target = world.target_label().to_string();
    let gt = world.target_region().clone();
    let canvas = world.canvas().clone();
    let backends = Backends::simulated(world);

    let mining = run_pipeline(&canvas, config, &backends)?;
    let ablation_config = PipelineConfig {
        iterations: 1,
        ..config.clone()
    };
    let ablation = run_pipeline(&canvas, &ablation_config, &backends)?;

    let mae_by_iterations = (1..=mining.history.len())
        .map(|k| Ok(mae(&mining.truncated(k)?.1, &gt)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedRow {
        seed,
        mining_label: mining.final_label().to_string(),
        ablation_label: ablation.final_label().to_string(),
        mining_correct: mining.final_label().as_str() == target,
        ablation_correct: ablation.final_label().as_str() == target,
        chosen_iteration: mining.chosen_iteration,
        final_iou: mask_iou(&mining.final_mask, &gt)?,
        ablation_iou: mask_iou(&ablation.final_mask, &gt)?,
        mae_by_iterations,
        target_min_score: target_min_score(&mining, &target),
        target,
    })
}

/// `n` worlds with seeds `config.seed, config.seed + 1, ...`.
pub fn cmd_simulate(config: &PipelineConfig, n: usize) -> Result<SimulationReport> {
    if n < 1 {
        bail!("simulate needs at least one world");
    }
    if config.backend != BackendKind::Simulated {
        bail!("simulate requires backend=simulated");
    }
    let rows = (0..n as u64)
        .into_par_iter()
        .map(|s| simulate_world(config, config.seed.wrapping_add(s)))
        .collect::<Result<Vec<_>>>()?;
    let nf = n as f64;
    let rate = |f: fn(&SeedRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / nf;
    let mean = |f: fn(&SeedRow) -> f64| rows.iter().map(f).sum::<f64>() / nf;
    let mae_trend = (0..config.iterations)
        .map(|k| rows.iter().map(|r| r.mae_by_iterations[k]).sum::<f64>() / nf)
        .collect();
    Ok(SimulationReport {
        n,
        iterations: config.iterations,
        mining_accuracy: rate(|r| r.mining_correct),
        ablation_accuracy: rate(|r| r.ablation_correct),
        mean_final_iou: mean(|r| r.final_iou),
        mean_ablation_iou: mean(|r| r.ablation_iou),
        mae_trend,
        rows,
    })
}
