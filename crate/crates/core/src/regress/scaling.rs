//! Post-hoc linear and Platt scaling fitted by ordinary least squares.

use serde::{Deserialize, Serialize};

use super::RegressError;

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingKind {
    Linear,
    Platt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub alpha: f64,
    pub beta: f64,
    pub kind: ScalingKind,
    /// `[lo, hi]` clip range for linear scaling.
    pub output_range: (f64, f64),
    /// Logit clamp for Platt scaling.
    pub epsilon: f64,
}

/// Probability range for forecasts of `P` or `p`.
pub const PROBABILITY_RANGE: (f64, f64) = (0.0, 1.0);
/// Range of a signed false-uncertainty target.
pub const SIGNED_RANGE: (f64, f64) = (-1.0, 1.0);

/// Closed-form solution of the 2x2 normal equations for `y ≈ α·x + β`,
/// written in centered form.
pub fn ols_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), RegressError> {
    if xs.len() != ys.len() {
        return Err(RegressError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(RegressError::TooFewPairs(xs.len()));
    }
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (y - y_mean);
    }
    let scale = xs.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    if !(sxx > 1e-14 * scale) {
        return Err(RegressError::DegenerateDesign);
    }
    let alpha = sxy / sxx;
    Ok((alpha, y_mean - alpha * x_mean))
}

pub fn fit_linear_scaling(pairs: &[(f64, f64)], output_range: (f64, f64)) -> Result<ScalingParams, RegressError> {
    if !(output_range.0 < output_range.1) {
        return Err(RegressError::InvalidRange(output_range));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let (alpha, beta) = ols_line(&xs, &ys)?;
    Ok(ScalingParams {
        alpha,
        beta,
        kind: ScalingKind::Linear,
        output_range,
        epsilon: DEFAULT_EPSILON,
    })
}

/// `clip(α·x + β, lo, hi)`.
pub fn apply_linear_scaling(params: &ScalingParams, x: f64) -> f64 {
    debug_assert_eq!(params.kind, ScalingKind::Linear);
    let (lo, hi) = params.output_range;
    (params.alpha * x + params.beta).clamp(lo, hi)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// OLS of `logit(y)` on `logit(x)`, both clamped into `[ε, 1-ε]` first.
pub fn fit_platt_scaling(pairs: &[(f64, f64)], epsilon: f64) -> Result<ScalingParams, RegressError> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(RegressError::InvalidEpsilon(epsilon));
    }
    let clamp = |v: f64| v.clamp(epsilon, 1.0 - epsilon);
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().map(|&(x, y)| (logit(clamp(x)), logit(clamp(y)))).unzip();
    let (alpha, beta) = ols_line(&xs, &ys)?;
    Ok(ScalingParams {
        alpha,
        beta,
        kind: ScalingKind::Platt,
        output_range: PROBABILITY_RANGE,
        epsilon,
    })
}

/// `expit(α·logit(clamp(x, ε, 1-ε)) + β)`.
pub fn apply_platt_scaling(params: &ScalingParams, x: f64) -> f64 {
    debug_assert_eq!(params.kind, ScalingKind::Platt);
    let x = x.clamp(params.epsilon, 1.0 - params.epsilon);
    expit(params.alpha * logit(x) + params.beta)
}

impl ScalingParams {
    pub fn apply(&self, x: f64) -> f64 {
        match self.kind {
            ScalingKind::Linear => apply_linear_scaling(self, x),
            ScalingKind::Platt => apply_platt_scaling(self, x),
        }
    }
}
