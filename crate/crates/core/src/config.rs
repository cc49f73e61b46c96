//! Pipeline configuration and its flat `key=value` file format.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys and unparsable values are errors that name the key.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use crate::backends::ScenarioParams;
use crate::candidates::PromptTemplates;
use crate::error::{Error, Result};
use crate::masks::{DEFAULT_N_POINTS, DEFAULT_SIMILARITY_THRESHOLD};
use crate::mining::{MiningConfig, ZeroSumPolicy};
use crate::model::DEFAULT_BINARIZE_THRESHOLD;
use crate::patching::PatchScheme;

pub const DEFAULT_ITERATIONS: usize = 5;
pub const DEFAULT_BLEND_WEIGHT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendKind {
    #[default]
    Simulated,
    Stub,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "simulated" => Ok(BackendKind::Simulated),
            "stub" => Ok(BackendKind::Stub),
            other => Err(format!("expected simulated or stub, got {other:?}")),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Simulated => "simulated",
            BackendKind::Stub => "stub",
        })
    }
}

/// What happens to candidates from earlier iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidatePolicy {
    /// Earlier labels stay in the scored vocabulary.
    #[default]
    Accumulate,
    /// Each iteration scores only its own candidates.
    Reset,
}

impl FromStr for CandidatePolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "accumulate" => Ok(CandidatePolicy::Accumulate),
            "reset" => Ok(CandidatePolicy::Reset),
            other => Err(format!("expected accumulate or reset, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub iterations: usize,
    pub blend_weight: f64,
    pub patch_scheme: PatchScheme,
    /// Required by `run`; `simulate` falls back to a built-in prompt.
    pub task_prompt: Option<String>,
    pub seed: u64,
    pub backend: BackendKind,
    pub templates: PromptTemplates,
    pub mining: MiningConfig,
    pub candidate_policy: CandidatePolicy,
    /// Normalized-similarity cutoff for mask aggregation.
    pub similarity_threshold: f64,
    pub n_points: usize,
    /// Threshold that turns the previous soft mask into an inpaint region.
    pub region_threshold: f64,
    pub max_wall_clock: Option<Duration>,
    /// Scene ranges for the simulated backend.
    pub sim: ScenarioParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            blend_weight: DEFAULT_BLEND_WEIGHT,
            patch_scheme: PatchScheme::OriginalHalveQuarters,
            task_prompt: None,
            seed: 0,
            backend: BackendKind::Simulated,
            templates: PromptTemplates::default(),
            mining: MiningConfig::default(),
            candidate_policy: CandidatePolicy::Accumulate,
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            n_points: DEFAULT_N_POINTS,
            region_threshold: DEFAULT_BINARIZE_THRESHOLD,
            max_wall_clock: None,
            sim: ScenarioParams::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Config {
        key: key.to_string(),
        message: format!("cannot parse {value:?}: {e}"),
    })
}

fn unit(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse(key, value)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::Config {
            key: key.to_string(),
            message: format!("{v} is outside [0, 1]"),
        })
    }
}

fn bool_value(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config {
            key: key.to_string(),
            message: format!("expected a boolean, got {value:?}"),
        }),
    }
}

impl PipelineConfig {
    /// Every key accepted by [`PipelineConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "iterations",
        "blend_weight",
        "patch_scheme",
        "task_prompt",
        "seed",
        "backend",
        "box_template",
        "name_template",
        "clamp_negative",
        "zero_sum_policy",
        "ledger_floor",
        "candidate_policy",
        "similarity_threshold",
        "n_points",
        "region_threshold",
        "max_wall_clock_secs",
        "sim_width",
        "sim_height",
        "sim_distractors",
        "sim_flicker_min",
        "sim_flicker_max",
        "sim_magnitude_min",
        "sim_magnitude_max",
        "sim_target_magnitude",
        "sim_target_size_min",
        "sim_target_size_max",
        "sim_temperature",
        "sim_floor",
        "sim_name_recall",
        "sim_box_coverage_min",
        "sim_box_coverage_max",
        "sim_detect_jitter",
        "sim_segment_noise",
    ];

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                message: format!("line {} is not key=value", n + 1),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.sim;
        match key {
            "iterations" => self.iterations = parse(key, value)?,
            "blend_weight" => self.blend_weight = unit(key, value)?,
            "patch_scheme" => self.patch_scheme = parse(key, value)?,
            "task_prompt" => self.task_prompt = Some(value.to_string()),
            "seed" => self.seed = parse(key, value)?,
            "backend" => self.backend = parse(key, value)?,
            "box_template" => self.templates.box_template = value.to_string(),
            "name_template" => self.templates.name_template = value.to_string(),
            "clamp_negative" => self.mining.clamp_negative = bool_value(key, value)?,
            "zero_sum_policy" => self.mining.zero_sum_policy = parse::<ZeroSumPolicy>(key, value)?,
            "ledger_floor" => self.mining.ledger_floor = unit(key, value)?,
            "candidate_policy" => self.candidate_policy = parse(key, value)?,
            "similarity_threshold" => self.similarity_threshold = unit(key, value)?,
            "n_points" => self.n_points = parse(key, value)?,
            "region_threshold" => self.region_threshold = unit(key, value)?,
            "max_wall_clock_secs" => {
                let secs: f64 = parse(key, value)?;
                self.max_wall_clock =
                    Some(Duration::try_from_secs_f64(secs).map_err(|e| Error::Config {
                        key: key.to_string(),
                        message: e.to_string(),
                    })?);
            }
            "sim_width" => s.width = parse(key, value)?,
            "sim_height" => s.height = parse(key, value)?,
            "sim_distractors" => s.n_distractors = parse(key, value)?,
            "sim_flicker_min" => s.flicker_range.0 = unit(key, value)?,
            "sim_flicker_max" => s.flicker_range.1 = unit(key, value)?,
            "sim_magnitude_min" => s.magnitude_ratio_range.0 = unit(key, value)?,
            "sim_magnitude_max" => s.magnitude_ratio_range.1 = unit(key, value)?,
            "sim_target_magnitude" => s.target_magnitude = unit(key, value)?,
            "sim_target_size_min" => s.target_size_range.0 = unit(key, value)?,
            "sim_target_size_max" => s.target_size_range.1 = unit(key, value)?,
            "sim_temperature" => s.temperature = parse(key, value)?,
            "sim_floor" => s.floor = unit(key, value)?,
            "sim_name_recall" => s.name_recall = unit(key, value)?,
            "sim_box_coverage_min" => s.box_coverage.0 = unit(key, value)?,
            "sim_box_coverage_max" => s.box_coverage.1 = unit(key, value)?,
            "sim_detect_jitter" => s.detect_jitter = parse(key, value)?,
            "sim_segment_noise" => s.segment_noise = unit(key, value)?,
            _ => {
                return Err(Error::Config {
                    key: key.to_string(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.to_string(),
                message: message.to_string(),
            })
        };
        if self.iterations == 0 {
            return bad("iterations", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.blend_weight) {
            return bad("blend_weight", "must lie in [0, 1]");
        }
        if self.n_points == 0 {
            return bad("n_points", "must be at least 1");
        }
        if let Some(p) = &self.task_prompt {
            if p.trim().is_empty() {
                return bad("task_prompt", "must not be empty");
            }
        }
        let s = &self.sim;
        if s.flicker_range.0 > s.flicker_range.1 {
            return bad("sim_flicker_min", "exceeds sim_flicker_max");
        }
        if s.magnitude_ratio_range.0 > s.magnitude_ratio_range.1 {
            return bad("sim_magnitude_min", "exceeds sim_magnitude_max");
        }
        if s.target_size_range.0 > s.target_size_range.1 {
            return bad("sim_target_size_min", "exceeds sim_target_size_max");
        }
        if s.box_coverage.0 > s.box_coverage.1 || s.box_coverage.0 == 0.0 {
            return bad("sim_box_coverage_min", "must be positive and not exceed sim_box_coverage_max");
        }
        if !(s.temperature > 0.0 && s.temperature.is_finite()) {
            return bad("sim_temperature", "must be positive");
        }
        if s.width < 8 || s.height < 8 {
            return bad("sim_width", "simulated canvases need at least 8x8");
        }
        Ok(())
    }

    pub fn task_prompt_or<'a>(&'a self, fallback: &'a str) -> &'a str {
        self.task_prompt.as_deref().unwrap_or(fallback)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::parse("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.iterations, 5);
        assert_eq!(cfg.blend_weight, 0.3);
        assert_eq!(cfg.patch_scheme, PatchScheme::OriginalHalveQuarters);
        assert_eq!(cfg.similarity_threshold, 0.05);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.backend, BackendKind::Simulated);
    }

    #[test]
    fn values_and_comments() {
        let cfg = PipelineConfig::parse(
            "# demo\nblend_weight=0.3\n iterations = 4 # short run\npatch_scheme=original+halve\ntask_prompt=camouflaged animal\nbackend=stub\n",
        )
        .unwrap();
        assert_eq!(cfg.blend_weight, 0.3);
        assert_eq!(cfg.iterations, 4);
        assert_eq!(cfg.patch_scheme, PatchScheme::OriginalHalve);
        assert_eq!(cfg.task_prompt.as_deref(), Some("camouflaged animal"));
        assert_eq!(cfg.backend, BackendKind::Stub);
    }

    fn key_of(text: &str) -> String {
        match PipelineConfig::parse(text).unwrap_err() {
            Error::Config { key, .. } => key,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(key_of("iterations=abc"), "iterations");
        assert_eq!(key_of("iteratons=5"), "iteratons");
        assert_eq!(key_of("blend_weight=1.5"), "blend_weight");
        assert_eq!(key_of("iterations=0"), "iterations");
        assert_eq!(key_of("zero_sum_policy=sometimes"), "zero_sum_policy");
        assert!(PipelineConfig::parse("iterations=abc")
            .unwrap_err()
            .to_string()
            .contains("iterations"));
    }

    #[test]
    fn every_listed_key_is_accepted() {
        for key in PipelineConfig::KEYS {
            let mut cfg = PipelineConfig::default();
            let err = cfg.set(key, "definitely not a value");
            if let Err(Error::Config { key: k, message }) = err {
                assert_eq!(k, *key);
                assert_ne!(message, "unknown key");
            }
        }
    }
}
