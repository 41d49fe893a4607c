//! Post-hoc scaling and fitted regression heads.
//!
//! Scaling maps a single forecast through an affine correction (in
//! probability or logit space). Heads map a feature vector, usually a prompt
//! embedding, to a target value.

pub mod forest;
pub mod scaling;
pub mod sgd;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::FeatureVector;

pub use forest::{RandomForest, RegressionTree, DEFAULT_MAX_DEPTH, DEFAULT_TREES};
pub use scaling::{
    apply_linear_scaling, apply_platt_scaling, expit, fit_linear_scaling, fit_platt_scaling, logit, ols_line,
    ScalingKind, ScalingParams, DEFAULT_EPSILON, PROBABILITY_RANGE, SIGNED_RANGE,
};
pub use sgd::{LinearModel, ReluNet, SgdConfig};

pub const RELU_HIDDEN: usize = 100;
/// Version tag of the serialized head format.
pub const HEAD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("degenerate design: inputs have zero variance")]
    DegenerateDesign,
    #[error("invalid output range {0:?}")]
    InvalidRange((f64, f64)),
    #[error("epsilon {0} outside (0, 0.5)")]
    InvalidEpsilon(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty estimate list")]
    Empty,
    #[error("head kind {0:?} does not fit this way")]
    WrongKind(HeadKind),
    #[error("head serialization: {0}")]
    Serialization(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Linear,
    ReluNet,
    RandomForest,
    RandomForestJoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HeadModel {
    Linear(LinearModel),
    ReluNet(ReluNet),
    Forest(RandomForest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub sgd: SgdConfig,
    pub hidden: usize,
    pub n_trees: usize,
    pub max_depth: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            sgd: SgdConfig::default(),
            hidden: RELU_HIDDEN,
            n_trees: DEFAULT_TREES,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionHead {
    pub version: u32,
    pub kind: HeadKind,
    pub input_dim: usize,
    pub rng_seed: u64,
    pub config: HeadConfig,
    pub model: HeadModel,
}

impl RegressionHead {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("head serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RegressError> {
        let head: Self = serde_json::from_str(text).map_err(|e| RegressError::Serialization(e.to_string()))?;
        if head.version != HEAD_FORMAT_VERSION {
            return Err(RegressError::Serialization(format!(
                "unsupported version {}",
                head.version
            )));
        }
        Ok(head)
    }
}

fn check_training_set(features: &[FeatureVector], targets: &[f64]) -> Result<usize, RegressError> {
    if features.len() != targets.len() {
        return Err(RegressError::LengthMismatch {
            left: features.len(),
            right: targets.len(),
        });
    }
    if features.len() < 2 {
        return Err(RegressError::TooFewPairs(features.len()));
    }
    let dim = features[0].dim();
    if let Some(bad) = features.iter().find(|f| f.dim() != dim) {
        return Err(RegressError::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    Ok(dim)
}

pub fn fit_head(
    features: &[FeatureVector],
    targets: &[f64],
    kind: HeadKind,
    seed: u64,
) -> Result<RegressionHead, RegressError> {
    fit_head_with(features, targets, kind, seed, &HeadConfig::default())
}

pub fn fit_head_with(
    features: &[FeatureVector],
    targets: &[f64],
    kind: HeadKind,
    seed: u64,
    config: &HeadConfig,
) -> Result<RegressionHead, RegressError> {
    let input_dim = check_training_set(features, targets)?;
    let xs: Vec<Vec<f64>> = features.iter().map(|f| f.values.clone()).collect();
    let model = match kind {
        HeadKind::Linear => HeadModel::Linear(LinearModel::fit(&xs, targets, &config.sgd, seed)),
        HeadKind::ReluNet => HeadModel::ReluNet(ReluNet::fit(&xs, targets, config.hidden, &config.sgd, seed)),
        HeadKind::RandomForest | HeadKind::RandomForestJoint => {
            HeadModel::Forest(RandomForest::fit(&xs, targets, config.n_trees, config.max_depth, seed))
        }
    };
    Ok(RegressionHead {
        version: HEAD_FORMAT_VERSION,
        kind,
        input_dim,
        rng_seed: seed,
        config: config.clone(),
        model,
    })
}

pub fn predict_head(head: &RegressionHead, feature: &FeatureVector) -> Result<f64, RegressError> {
    if feature.dim() != head.input_dim {
        return Err(RegressError::DimensionMismatch {
            expected: head.input_dim,
            found: feature.dim(),
        });
    }
    let x = &feature.values;
    Ok(match &head.model {
        HeadModel::Linear(m) => m.predict(x),
        HeadModel::ReluNet(m) => m.predict(x),
        HeadModel::Forest(m) => m.predict(x),
    })
}

/// Forest over `[features_P, features_p]` concatenated per dialogue.
pub fn fit_joint_head(
    features_forecast: &[FeatureVector],
    features_world: &[FeatureVector],
    fun_targets: &[f64],
    seed: u64,
) -> Result<RegressionHead, RegressError> {
    fit_joint_head_with(
        features_forecast,
        features_world,
        fun_targets,
        seed,
        &HeadConfig::default(),
    )
}

pub fn fit_joint_head_with(
    features_forecast: &[FeatureVector],
    features_world: &[FeatureVector],
    fun_targets: &[f64],
    seed: u64,
    config: &HeadConfig,
) -> Result<RegressionHead, RegressError> {
    if features_forecast.len() != features_world.len() {
        return Err(RegressError::LengthMismatch {
            left: features_forecast.len(),
            right: features_world.len(),
        });
    }
    let joined = join_features(features_forecast, features_world);
    fit_head_with(&joined, fun_targets, HeadKind::RandomForestJoint, seed, config)
}

pub fn join_features(features_forecast: &[FeatureVector], features_world: &[FeatureVector]) -> Vec<FeatureVector> {
    features_forecast
        .iter()
        .zip(features_world)
        .map(|(a, b)| a.concat(b))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseDecomposition {
    pub variance: f64,
    pub bias_sq: f64,
    pub mse: f64,
}

/// Population variance, squared bias and MSE of repeated estimates of `truth`.
pub fn mse_decomposition(estimates: &[f64], truth: f64) -> Result<MseDecomposition, RegressError> {
    if estimates.is_empty() {
        return Err(RegressError::Empty);
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let variance = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let bias_sq = (mean - truth).powi(2);
    Ok(MseDecomposition {
        variance,
        bias_sq,
        mse: variance + bias_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            values,
            backend_id: "test".into(),
        }
    }

    fn planted(n: usize, dim: usize, seed: u64) -> (Vec<FeatureVector>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features: Vec<FeatureVector> = (0..n)
            .map(|_| fv((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let targets = features.iter().map(|f| f.values[0]).collect();
        (features, targets)
    }

    #[test]
    fn mse_examples() {
        let d = mse_decomposition(&[0.4, 0.6], 0.5).unwrap();
        assert!((d.variance - 0.01).abs() < 1e-15 && d.bias_sq < 1e-30 && (d.mse - 0.01).abs() < 1e-15);
        let d = mse_decomposition(&[0.3, 0.3, 0.3], 0.3).unwrap();
        assert_eq!((d.variance, d.bias_sq, d.mse), (0.0, 0.0, 0.0));
        let d = mse_decomposition(&[0.7], 0.5).unwrap();
        assert_eq!(d.variance, 0.0);
        assert!((d.bias_sq - 0.04).abs() < 1e-15);
        assert!(matches!(mse_decomposition(&[], 0.5), Err(RegressError::Empty)));
    }

    #[test]
    fn linear_head_fits_planted_coordinate() {
        let (features, targets) = planted(100, 16, 3);
        let head = fit_head(&features, &targets, HeadKind::Linear, 1).unwrap();
        let mse = features
            .iter()
            .zip(&targets)
            .map(|(f, y)| (predict_head(&head, f).unwrap() - y).powi(2))
            .sum::<f64>()
            / targets.len() as f64;
        assert!(mse <= 1e-4, "training mse {mse}");
    }

    #[test]
    fn zero_linear_head_returns_bias() {
        let head = RegressionHead {
            version: HEAD_FORMAT_VERSION,
            kind: HeadKind::Linear,
            input_dim: 3,
            rng_seed: 0,
            config: HeadConfig::default(),
            model: HeadModel::Linear(LinearModel {
                weights: vec![0.0; 3],
                bias: 0.42,
            }),
        };
        assert_eq!(predict_head(&head, &fv(vec![5.0, -1.0, 2.0])).unwrap(), 0.42);
        assert!(matches!(
            predict_head(&head, &fv(vec![1.0])),
            Err(RegressError::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn forest_head_is_deterministic_and_round_trips() {
        let (features, targets) = planted(60, 4, 8);
        let a = fit_head(&features, &targets, HeadKind::RandomForest, 11).unwrap();
        let b = fit_head(&features, &targets, HeadKind::RandomForest, 11).unwrap();
        assert_eq!(a, b);
        let HeadModel::Forest(forest) = &a.model else {
            panic!("forest expected")
        };
        assert_eq!(forest.trees.len(), 100);
        assert!(forest.trees.iter().all(|t| t.depth() <= 5));
        let reloaded = RegressionHead::from_json(&a.to_json()).unwrap();
        let probe = fv(vec![0.1, -0.2, 0.3, 0.9]);
        assert_eq!(
            predict_head(&reloaded, &probe).unwrap(),
            predict_head(&a, &probe).unwrap()
        );
    }

    #[test]
    fn training_set_errors() {
        let err = fit_head(&[fv(vec![1.0, 2.0]), fv(vec![1.0])], &[0.0, 1.0], HeadKind::Linear, 0);
        assert!(matches!(err, Err(RegressError::DimensionMismatch { .. })));
        let err = fit_head(&[fv(vec![1.0])], &[0.0], HeadKind::Linear, 0);
        assert!(matches!(err, Err(RegressError::TooFewPairs(1))));
        let err = fit_joint_head(&[fv(vec![1.0]), fv(vec![2.0])], &[fv(vec![1.0])], &[0.0, 1.0], 0);
        assert!(matches!(err, Err(RegressError::LengthMismatch { .. })));
    }

    #[test]
    fn joint_head_uses_concatenated_features() {
        let (fp, _) = planted(80, 3, 1);
        let (fw, _) = planted(80, 3, 2);
        let targets: Vec<f64> = fp.iter().zip(&fw).map(|(a, b)| a.values[0] - b.values[0]).collect();
        let config = HeadConfig {
            n_trees: 20,
            ..Default::default()
        };
        let head = fit_joint_head_with(&fp, &fw, &targets, 4, &config).unwrap();
        assert_eq!(head.input_dim, 6);
        assert_eq!(head.kind, HeadKind::RandomForestJoint);
        assert_eq!(head, fit_joint_head_with(&fp, &fw, &targets, 4, &config).unwrap());
    }

    proptest! {
        #[test]
        fn mse_identity(estimates in proptest::collection::vec(-1.0f64..1.0, 1..50), truth in -1.0f64..1.0) {
            let d = mse_decomposition(&estimates, truth).unwrap();
            let direct = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / estimates.len() as f64;
            prop_assert!((d.mse - direct).abs() < 1e-12);
            prop_assert!((d.mse - d.variance - d.bias_sq).abs() < 1e-12);
        }
    }
}
