//! Evaluation math: the Brier decomposition and regression metrics pooled
//! across splits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("undefined correlation: constant input")]
    UndefinedCorrelation,
    #[error("degenerate test variance")]
    DegenerateTestVariance,
    #[error("no splits to pool")]
    NoSplits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrierDecomposition {
    pub expected_bs: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

/// Expected Brier score of forecast `forecast` when the outcome is
/// Bernoulli(`p`), with its aleatoric and epistemic parts.
pub fn expected_brier(forecast: f64, p: f64) -> BrierDecomposition {
    BrierDecomposition {
        expected_bs: p * (1.0 - forecast).powi(2) + (1.0 - p) * forecast.powi(2),
        aleatoric: p * (1.0 - p),
        epistemic: (forecast - p).powi(2),
    }
}

fn check_pair(xs: &[f64], ys: &[f64], needed: usize) -> Result<(), MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < needed {
        return Err(MetricsError::TooFew { needed, got: xs.len() });
    }
    Ok(())
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    check_pair(xs, ys, 2)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::UndefinedCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with tied values sharing the mean of their positions.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    check_pair(xs, ys, 2)?;
    pearson(&midranks(xs), &midranks(ys))
}

/// Mean absolute error in percentage points.
pub fn mae_percent(preds: &[f64], targets: &[f64]) -> Result<f64, MetricsError> {
    check_pair(preds, targets, 1)?;
    let total: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / preds.len() as f64 * 100.0)
}

/// `1 - SS_res / SS_tot` with `SS_tot` centered on the training mean.
pub fn oos_r_squared(test_targets: &[f64], preds: &[f64], train_mean: f64) -> Result<f64, MetricsError> {
    check_pair(test_targets, preds, 1)?;
    let ss_res: f64 = test_targets.iter().zip(preds).map(|(y, p)| (y - p).powi(2)).sum();
    let ss_tot: f64 = test_targets.iter().map(|y| (y - train_mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(MetricsError::DegenerateTestVariance);
    }
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub targets: Vec<f64>,
    pub preds: Vec<f64>,
    pub train_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMeanMode {
    /// Each test point is centered on its own split's training mean.
    #[default]
    SplitLocal,
    /// Every test point is centered on the count-weighted mean of the
    /// per-split training means.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub pearson: f64,
    pub spearman: f64,
    pub mae_percent: f64,
    pub r_squared: f64,
    pub n_test: usize,
    pub train_mean: f64,
}

pub fn micro_average(splits: &[SplitResult]) -> Result<RegressionReport, MetricsError> {
    micro_average_with(splits, TrainMeanMode::SplitLocal)
}

/// Pools every (target, prediction) pair across splits and computes each
/// metric once.
pub fn micro_average_with(splits: &[SplitResult], mode: TrainMeanMode) -> Result<RegressionReport, MetricsError> {
    if splits.is_empty() {
        return Err(MetricsError::NoSplits);
    }
    let mut targets = Vec::new();
    let mut preds = Vec::new();
    let mut centers = Vec::new();
    for split in splits {
        check_pair(&split.targets, &split.preds, 1)?;
        targets.extend_from_slice(&split.targets);
        preds.extend_from_slice(&split.preds);
        centers.extend(std::iter::repeat_n(split.train_mean, split.targets.len()));
    }
    let train_mean = centers.iter().sum::<f64>() / centers.len() as f64;
    if mode == TrainMeanMode::Global {
        centers.iter_mut().for_each(|c| *c = train_mean);
    }
    let ss_res: f64 = targets.iter().zip(&preds).map(|(y, p)| (y - p).powi(2)).sum();
    let ss_tot: f64 = targets.iter().zip(&centers).map(|(y, c)| (y - c).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(MetricsError::DegenerateTestVariance);
    }
    Ok(RegressionReport {
        pearson: pearson(&preds, &targets)?,
        spearman: spearman(&preds, &targets)?,
        mae_percent: mae_percent(&preds, &targets)?,
        r_squared: 1.0 - ss_res / ss_tot,
        n_test: targets.len(),
        train_mean,
    })
}
