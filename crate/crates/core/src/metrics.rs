//! Evaluation measures for soft predictions against binary ground truth:
//! mean absolute error, adaptive F-measure, mean E-measure and S-measure.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BinaryMask, SoftMask};

pub const BETA2: f64 = 0.3;
pub const S_ALPHA: f64 = 0.5;
pub const E_THRESHOLDS: usize = 256;

const E_EPS: f64 = 1e-12;
const S_EPS: f64 = f64::EPSILON;

fn check(pred: &SoftMask, gt: &BinaryMask) -> Result<()> {
    if pred.dims() == gt.dims() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: gt.dims(),
            actual: pred.dims(),
        })
    }
}

fn gt_value(g: bool) -> f64 {
    if g {
        1.0
    } else {
        0.0
    }
}

pub fn mae(pred: &SoftMask, gt: &BinaryMask) -> Result<f64> {
    check(pred, gt)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, &g)| (p - gt_value(g)).abs())
        .sum();
    Ok(sum / pred.data().len() as f64)
}

/// Binarizes at twice the mean prediction, capped at 1. Pixels at the
/// threshold count as foreground, zero-valued pixels never do.
pub fn adaptive_binarize(pred: &SoftMask) -> BinaryMask {
    let t = (2.0 * pred.mean()).min(1.0);
    let data = pred.data().iter().map(|&p| p >= t && p > 0.0).collect();
    BinaryMask::new(pred.width(), pred.height(), data).expect("dimensions come from a mask")
}

/// Intersection over union of the adaptively binarized prediction.
pub fn mask_iou(pred: &SoftMask, gt: &BinaryMask) -> Result<f64> {
    check(pred, gt)?;
    adaptive_binarize(pred).iou(gt)
}

/// F-measure of the adaptively binarized prediction. An all-zero
/// prediction scores 0.
pub fn adaptive_fmeasure(pred: &SoftMask, gt: &BinaryMask, beta2: f64) -> Result<f64> {
    check(pred, gt)?;
    let fm = adaptive_binarize(pred);
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for (&fg, &g) in fm.data().iter().zip(gt.data()) {
        match (fg, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fnn == 0 { 0.0 } else { tp as f64 / (tp + fnn) as f64 };
    if precision == 0.0 && recall == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 + beta2) * precision * recall / (beta2 * precision + recall))
}

/// Enhanced alignment of one binarized prediction, from its confusion
/// counts.
fn emeasure_from_counts(tp: usize, fp: usize, fnn: usize, tn: usize) -> f64 {
    let n = (tp + fp + fnn + tn) as f64;
    let fg_gt = (tp + fnn) as f64;
    let fg_fm = (tp + fp) as f64;
    if fg_gt == 0.0 {
        return 1.0 - fg_fm / n;
    }
    if fg_gt == n {
        return fg_fm / n;
    }
    let mu_gt = fg_gt / n;
    let mu_fm = fg_fm / n;
    let enhanced = |fm: f64, g: f64| {
        let (a, b) = (fm - mu_fm, g - mu_gt);
        let xi = 2.0 * a * b / (a * a + b * b + E_EPS);
        (1.0 + xi).powi(2) / 4.0
    };
    (tp as f64 * enhanced(1.0, 1.0)
        + fp as f64 * enhanced(1.0, 0.0)
        + fnn as f64 * enhanced(0.0, 1.0)
        + tn as f64 * enhanced(0.0, 0.0))
        / n
}

/// Mean E-measure over the thresholds `j / 256` for `j = 0, stride, ...`
/// below 256. A pixel is foreground when strictly above the threshold.
pub fn mean_emeasure_strided(pred: &SoftMask, gt: &BinaryMask, stride: usize) -> Result<f64> {
    check(pred, gt)?;
    if stride == 0 {
        return Err(Error::OutOfRange {
            what: "E-measure threshold stride",
            value: 0.0,
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for j in (0..E_THRESHOLDS).step_by(stride) {
        let t = j as f64 / E_THRESHOLDS as f64;
        let (mut tp, mut fp, mut fnn, mut tn) = (0, 0, 0, 0);
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p > t, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                (false, false) => tn += 1,
            }
        }
        total += emeasure_from_counts(tp, fp, fnn, tn);
        count += 1;
    }
    Ok(total / count as f64)
}

pub fn mean_emeasure(pred: &SoftMask, gt: &BinaryMask) -> Result<f64> {
    mean_emeasure_strided(pred, gt, 1)
}

/// Mean and sample standard deviation; a single value has deviation 0.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn object_score(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + S_EPS)
}

fn s_object(pred: &SoftMask, gt: &BinaryMask) -> f64 {
    let fg: Vec<f64> = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(_, &g)| g)
        .map(|(&p, _)| p)
        .collect();
    let bg: Vec<f64> = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(_, &g)| !g)
        .map(|(&p, _)| 1.0 - p)
        .collect();
    let u = fg.len() as f64 / gt.data().len() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// Split column and row (exclusive) at the rounded foreground centroid,
/// shifted by one as in the reference implementation.
fn centroid(gt: &BinaryMask) -> (usize, usize) {
    let (w, h) = gt.dims();
    let n = gt.count();
    if n == 0 {
        return (
            (w as f64 / 2.0).round_ties_even() as usize + 1,
            (h as f64 / 2.0).round_ties_even() as usize + 1,
        );
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if gt.get(x, y) {
                sx += x as f64;
                sy += y as f64;
            }
        }
    }
    (
        (sx / n as f64).round_ties_even() as usize + 1,
        (sy / n as f64).round_ties_even() as usize + 1,
    )
}

fn block_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let x = pred.iter().sum::<f64>() / nf;
    let y = gt.iter().sum::<f64>() / nf;
    let denom = if n > 1 { nf - 1.0 } else { 1.0 };
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        sxx += (p - x).powi(2);
        syy += (g - y).powi(2);
        sxy += (p - x) * (g - y);
    }
    let (sxx, syy, sxy) = (sxx / denom, syy / denom, sxy / denom);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + S_EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pred: &SoftMask, gt: &BinaryMask) -> f64 {
    let (w, h) = gt.dims();
    let (cx, cy) = centroid(gt);
    let (cx, cy) = (cx.min(w), cy.min(h));
    let area = (w * h) as f64;
    let blocks = [
        (0..cx, 0..cy),
        (cx..w, 0..cy),
        (0..cx, cy..h),
        (cx..w, cy..h),
    ];
    let mut total = 0.0;
    for (xs, ys) in blocks {
        let mut p = Vec::new();
        let mut g = Vec::new();
        for y in ys.clone() {
            for x in xs.clone() {
                p.push(pred.get(x, y));
                g.push(gt_value(gt.get(x, y)));
            }
        }
        let weight = p.len() as f64 / area;
        if weight > 0.0 {
            total += weight * block_ssim(&p, &g);
        }
    }
    total
}

pub fn smeasure(pred: &SoftMask, gt: &BinaryMask, alpha: f64) -> Result<f64> {
    check(pred, gt)?;
    let u = gt.count() as f64 / gt.data().len() as f64;
    let s = if u == 0.0 {
        1.0 - pred.mean()
    } else if u == 1.0 {
        pred.mean()
    } else {
        alpha * s_object(pred, gt) + (1.0 - alpha) * s_region(pred, gt)
    };
    Ok(s.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricValues {
    #[serde(rename = "M")]
    pub mae: f64,
    #[serde(rename = "F_beta")]
    pub f_beta: f64,
    #[serde(rename = "E_phi")]
    pub e_phi: f64,
    #[serde(rename = "S_alpha")]
    pub s_alpha: f64,
}

impl MetricValues {
    pub fn compute(pred: &SoftMask, gt: &BinaryMask) -> Result<Self> {
        Ok(Self {
            mae: mae(pred, gt)?,
            f_beta: adaptive_fmeasure(pred, gt, BETA2)?,
            e_phi: mean_emeasure(pred, gt)?,
            s_alpha: smeasure(pred, gt, S_ALPHA)?,
        })
    }

    fn mean_of(values: &[MetricValues]) -> Self {
        let n = values.len() as f64;
        let avg = |f: fn(&MetricValues) -> f64| values.iter().map(f).sum::<f64>() / n;
        Self {
            mae: avg(|v| v.mae),
            f_beta: avg(|v| v.f_beta),
            e_phi: avg(|v| v.e_phi),
            s_alpha: avg(|v| v.s_alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub id: String,
    #[serde(flatten)]
    pub values: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub count: usize,
    pub aggregate: MetricValues,
    /// In input order.
    pub per_image: Vec<ImageMetrics>,
}

/// Per-image metrics and their unweighted means.
pub fn evaluate_dataset(pairs: &[(String, SoftMask, BinaryMask)]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let per_image = pairs
        .par_iter()
        .map(|(id, pred, gt)| {
            Ok(ImageMetrics {
                id: id.clone(),
                values: MetricValues::compute(pred, gt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<MetricValues> = per_image.iter().map(|m| m.values).collect();
    Ok(MetricReport {
        count: per_image.len(),
        aggregate: MetricValues::mean_of(&values),
        per_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gt(rows: &[&[bool]]) -> BinaryMask {
        BinaryMask::from_rows(rows).unwrap()
    }

    fn mixed() -> BinaryMask {
        gt(&[&[true, false, false], &[true, true, false], &[false, false, false]])
    }

    #[test]
    fn mae_examples() {
        let g = mixed();
        assert_eq!(mae(&g.to_soft(), &g).unwrap(), 0.0);
        assert_eq!(mae(&g.to_soft().inverted(), &g).unwrap(), 1.0);
        assert_eq!(mae(&SoftMask::filled(3, 3, 0.5).unwrap(), &g).unwrap(), 0.5);
        assert!(mae(&SoftMask::zeros(2, 2).unwrap(), &g).is_err());
    }

    #[test]
    fn fmeasure_examples() {
        let g = mixed();
        assert_abs_diff_eq!(adaptive_fmeasure(&g.to_soft(), &g, BETA2).unwrap(), 1.0);
        let g2 = gt(&[&[true, false], &[false, false]]);
        let p2 = SoftMask::from_rows(&[&[1.0, 1.0], &[0.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(adaptive_fmeasure(&p2, &g2, BETA2).unwrap(), 0.65 / 1.15, epsilon = 1e-12);
        assert_eq!(adaptive_fmeasure(&SoftMask::zeros(3, 3).unwrap(), &g, BETA2).unwrap(), 0.0);
    }

    #[test]
    fn emeasure_examples() {
        let g = mixed();
        assert_abs_diff_eq!(mean_emeasure(&g.to_soft(), &g).unwrap(), 1.0, epsilon = 1e-6);
        let empty = BinaryMask::empty(3, 3).unwrap();
        assert_eq!(mean_emeasure(&SoftMask::zeros(3, 3).unwrap(), &empty).unwrap(), 1.0);
        assert_eq!(mean_emeasure(&SoftMask::filled(3, 3, 1.0).unwrap(), &empty).unwrap(), 0.0);
        let strided = mean_emeasure_strided(&g.to_soft(), &g, 16).unwrap();
        assert_abs_diff_eq!(strided, 1.0, epsilon = 1e-6);
        assert!(mean_emeasure_strided(&g.to_soft(), &g, 0).is_err());
    }

    /// Direct per-pixel evaluation of the alignment formula.
    fn emeasure_pixelwise(fm: &[f64], g: &[f64]) -> f64 {
        let n = fm.len() as f64;
        let mg = g.iter().sum::<f64>() / n;
        let mf = fm.iter().sum::<f64>() / n;
        if mg == 0.0 {
            return 1.0 - mf;
        }
        if mg == 1.0 {
            return mf;
        }
        fm.iter()
            .zip(g)
            .map(|(f, gv)| {
                let (a, b) = (f - mf, gv - mg);
                let xi = 2.0 * a * b / (a * a + b * b + 1e-12);
                (1.0 + xi).powi(2) / 4.0
            })
            .sum::<f64>()
            / n
    }

    #[test]
    fn emeasure_counts_match_pixelwise_formula() {
        let g = mixed();
        let pred = SoftMask::from_rows(&[&[0.9, 0.2, 0.0], &[0.6, 0.3, 0.7], &[0.1, 0.0, 0.4]]).unwrap();
        let mut expected = 0.0;
        for j in 0..256 {
            let t = j as f64 / 256.0;
            let fm: Vec<f64> = pred.data().iter().map(|&p| gt_value(p > t)).collect();
            let gv: Vec<f64> = g.data().iter().map(|&b| gt_value(b)).collect();
            expected += emeasure_pixelwise(&fm, &gv);
        }
        assert_abs_diff_eq!(mean_emeasure(&pred, &g).unwrap(), expected / 256.0, epsilon = 1e-12);
    }

    #[test]
    fn smeasure_examples() {
        let g = mixed();
        assert_abs_diff_eq!(smeasure(&g.to_soft(), &g, S_ALPHA).unwrap(), 1.0, epsilon = 1e-6);
        let empty = BinaryMask::empty(3, 3).unwrap();
        assert_eq!(smeasure(&SoftMask::zeros(3, 3).unwrap(), &empty, S_ALPHA).unwrap(), 1.0);
        assert_eq!(smeasure(&SoftMask::filled(3, 3, 1.0).unwrap(), &empty, S_ALPHA).unwrap(), 0.0);
        let inverted = smeasure(&g.to_soft().inverted(), &g, S_ALPHA).unwrap();
        assert!(inverted < 0.2, "{inverted}");
    }

    #[test]
    fn smeasure_reference_value() {
        // hand evaluation of the reference algorithm on a 4x4 case
        let g = gt(&[
            &[false, false, false, false],
            &[false, true, true, false],
            &[false, true, true, false],
            &[false, false, false, false],
        ]);
        let pred = SoftMask::filled(4, 4, 0.5).unwrap();
        // object: fg mean 0.5, std 0 -> 1/1.25; bg (1-p) mean 0.5 -> same
        let object = 2.0 * 0.5 / (0.25 + 1.0);
        // centroid (1.5, 1.5) rounds to (2, 2), split at 3. Only the 3x3
        // block holds foreground; constant pred scores 0 there and 1 on the
        // all-background blocks.
        let mut region = 0.0;
        for (n, varies) in [(9.0, true), (3.0, false), (3.0, false), (1.0, false)] {
            let score = if varies { 0.0 } else { 1.0 };
            region += n / 16.0 * score;
        }
        let expected = 0.5 * object + 0.5 * region;
        assert_abs_diff_eq!(smeasure(&pred, &g, S_ALPHA).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn dataset_aggregation() {
        let g = mixed();
        let perfect = ("a".to_string(), g.to_soft(), g.clone());
        let one = evaluate_dataset(std::slice::from_ref(&perfect)).unwrap();
        assert_eq!(one.aggregate, one.per_image[0].values);
        let twice = evaluate_dataset(&[perfect.clone(), perfect.clone()]).unwrap();
        assert_eq!(twice.aggregate, one.aggregate);
        assert_eq!(twice.count, 2);
        let mut off = g.to_soft();
        off.set(2, 2, 1.0);
        off.set(2, 1, 0.8);
        // 1.8 / 9 = 0.2
        let two = evaluate_dataset(&[perfect, ("b".into(), off, g)]).unwrap();
        assert_abs_diff_eq!(two.aggregate.mae, 0.1, epsilon = 1e-12);
        assert!(evaluate_dataset(&[]).is_err());
    }

    fn pair(max: usize) -> impl Strategy<Value = (SoftMask, BinaryMask)> {
        (1..=max, 1..=max).prop_flat_map(|(w, h)| {
            (
                proptest::collection::vec(
                    prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0],
                    w * h,
                ),
                proptest::collection::vec(any::<bool>(), w * h),
            )
                .prop_map(move |(p, g)| (SoftMask::new(w, h, p).unwrap(), BinaryMask::new(w, h, g).unwrap()))
        })
    }

    proptest! {
        #[test]
        fn metrics_stay_in_unit_interval((pred, g) in pair(16)) {
            let v = MetricValues::compute(&pred, &g).unwrap();
            for x in [v.mae, v.f_beta, v.e_phi, v.s_alpha] {
                prop_assert!((0.0..=1.0).contains(&x), "{:?}", v);
            }
        }

        #[test]
        fn emeasure_is_transpose_invariant((pred, g) in pair(12)) {
            let (w, h) = pred.dims();
            let tp = SoftMask::new(h, w, (0..w * h).map(|i| pred.get(i / h, i % h)).collect()).unwrap();
            let tg = BinaryMask::new(h, w, (0..w * h).map(|i| g.get(i / h, i % h)).collect()).unwrap();
            let a = mean_emeasure(&pred, &g).unwrap();
            let b = mean_emeasure(&tp, &tg).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn binary_low_mean_predictions_keep_their_pixels(g in proptest::collection::vec(any::<bool>(), 16), p in proptest::collection::vec(any::<bool>(), 16)) {
            let pred = BinaryMask::new(4, 4, p).unwrap();
            let gt = BinaryMask::new(4, 4, g).unwrap();
            let soft = pred.to_soft();
            prop_assume!(soft.mean() < 0.5);
            let t = 2.0 * soft.mean();
            for &v in soft.data() {
                prop_assert_eq!(v >= t && v > 0.0, v == 1.0);
            }
            let _ = adaptive_fmeasure(&soft, &gt, BETA2).unwrap();
        }
    }
}
