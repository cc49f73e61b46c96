use std::path::Path;

use anyhow::{bail, Result};
use promptmine_core::metrics::{evaluate_dataset, MetricReport, MetricValues};
use serde::Serialize;
use tracing::warn;

use crate::dataset::files_by_stem;
use crate::io::{read_gt, read_mask};
use crate::report::{sig4, to_json};

/// Prediction files written by `run` carry this suffix after the id.
pub const MASK_SUFFIX: &str = "_mask";

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationOutcome {
    /// `None` when no pair could be evaluated.
    pub report: Option<MetricReport>,
    /// (id, error) for pairs that could not be evaluated.
    pub errors: Vec<(String, String)>,
}

impl EvaluationOutcome {
    pub fn ok(&self) -> bool {
        self.errors.is_empty() && self.report.is_some()
    }

    /// The report file: four significant digits, keys `M`, `F_beta`,
    /// `E_phi`, `S_alpha`, images in id order.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row<'a> {
            id: &'a str,
            #[serde(flatten)]
            values: MetricValues,
        }
        #[derive(Serialize)]
        struct Failure<'a> {
            id: &'a str,
            error: &'a str,
        }
        #[derive(Serialize)]
        struct File<'a> {
            count: usize,
            aggregate: Option<MetricValues>,
            per_image: Vec<Row<'a>>,
            errors: Vec<Failure<'a>>,
        }
        let round = |v: &MetricValues| MetricValues {
            mae: sig4(v.mae),
            f_beta: sig4(v.f_beta),
            e_phi: sig4(v.e_phi),
            s_alpha: sig4(v.s_alpha),
        };
        let file = File {
            count: self.report.as_ref().map_or(0, |r| r.count),
            aggregate: self.report.as_ref().map(|r| round(&r.aggregate)),
            per_image: self
                .report
                .iter()
                .flat_map(|r| &r.per_image)
                .map(|m| Row {
                    id: &m.id,
                    values: round(&m.values),
                })
                .collect(),
            errors: self
                .errors
                .iter()
                .map(|(id, error)| Failure { id, error })
                .collect(),
        };
        to_json(&file)
    }
}

/// Pairs `<id>_mask.<ext>` (or `<id>.<ext>`) predictions with `<id>.<ext>`
/// ground truth and evaluates every pair.
pub fn cmd_evaluate(pred_dir: &Path, gt_dir: &Path) -> Result<EvaluationOutcome> {
    let preds = files_by_stem(pred_dir)?;
    let gts = files_by_stem(gt_dir)?;
    let mut pairs = Vec::new();
    let mut errors = Vec::new();
    for (stem, pred_path) in &preds {
        let id = stem.strip_suffix(MASK_SUFFIX).unwrap_or(stem);
        let Some(gt_path) = gts.get(id) else {
            warn!(%id, "prediction has no ground truth, ignored");
            continue;
        };
        let loaded = read_mask(pred_path).and_then(|p| Ok((p, read_gt(gt_path)?)));
        match loaded {
            Ok((p, g)) if p.dims() != g.dims() => errors.push((
                id.to_string(),
                format!("dimension mismatch: prediction {:?}, ground truth {:?}", p.dims(), g.dims()),
            )),
            Ok((p, g)) => pairs.push((id.to_string(), p, g)),
            Err(e) => errors.push((id.to_string(), format!("{e:#}"))),
        }
    }
    if pairs.is_empty() && errors.is_empty() {
        bail!(
            "no prediction in {} pairs with ground truth in {}",
            pred_dir.display(),
            gt_dir.display()
        );
    }
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    errors.sort();
    let report = if pairs.is_empty() {
        None
    } else {
        Some(evaluate_dataset(&pairs)?)
    };
    Ok(EvaluationOutcome { report, errors })
}
