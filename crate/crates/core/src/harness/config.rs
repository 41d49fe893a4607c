//! Experiment configuration, read from TOML.
//!
//! ```toml
//! task = "1tuq"            # 1tuq | 2tuq | funq
//! method = "df_ls"         # df | df_ls | df_ps | ft_l | ft_nn | ft_rf | ft_rf_j
//! bot_n = 1
//! seeds = [1, 2, 3, 4, 5]
//! train_n = 100
//! output_dir = "runs"
//!
//! [backend]
//! kind = "synthetic"
//! seed = 7
//! n_dialogues = 400
//! sigma = 0.1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corpus::DEFAULT_CHAR_BUDGET;
use crate::gateway::{SamplingOptions, Task};
use crate::regress::{HeadConfig, HeadKind, SgdConfig, DEFAULT_MAX_DEPTH, DEFAULT_TREES, RELU_HIDDEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "1tuq")]
    OneTuq,
    #[serde(rename = "2tuq")]
    TwoTuq,
    #[serde(rename = "funq")]
    Funq,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::OneTuq => "1tuq",
            TaskKind::TwoTuq => "2tuq",
            TaskKind::Funq => "funq",
        }
    }

    /// Prompt sides needed; FUnQ uses the interlocutor side then the world side.
    pub fn prompt_tasks(self) -> &'static [Task] {
        match self {
            TaskKind::OneTuq => &[Task::OneTuq],
            TaskKind::TwoTuq => &[Task::TwoTuq],
            TaskKind::Funq => &[Task::TwoTuq, Task::FunqWorldSide],
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "1tuq" => Some(TaskKind::OneTuq),
            "2tuq" => Some(TaskKind::TwoTuq),
            "funq" => Some(TaskKind::Funq),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Df,
    DfLs,
    DfPs,
    FtL,
    FtNn,
    FtRf,
    FtRfJ,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Df,
        Method::DfLs,
        Method::DfPs,
        Method::FtL,
        Method::FtNn,
        Method::FtRf,
        Method::FtRfJ,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Df => "df",
            Method::DfLs => "df_ls",
            Method::DfPs => "df_ps",
            Method::FtL => "ft_l",
            Method::FtNn => "ft_nn",
            Method::FtRf => "ft_rf",
            Method::FtRfJ => "ft_rf_j",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Methods that regress on embeddings rather than sampled forecasts.
    pub fn head_kind(self) -> Option<HeadKind> {
        match self {
            Method::FtL => Some(HeadKind::Linear),
            Method::FtNn => Some(HeadKind::ReluNet),
            Method::FtRf => Some(HeadKind::RandomForest),
            Method::FtRfJ => Some(HeadKind::RandomForestJoint),
            Method::Df | Method::DfLs | Method::DfPs => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// Coordinate 0 of each embedding carries the prompt's target plus noise.
    #[default]
    Linear,
    /// The false-uncertainty target is only recoverable from both sides'
    /// embeddings together: the interlocutor side carries `s·FUn` and the
    /// world side the sign `s`, with coordinate 0 replaced by noise.
    Entangled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Synthetic {
        #[serde(default = "default_backend_seed")]
        seed: u64,
        #[serde(default = "default_n_dialogues")]
        n_dialogues: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_embed_dim")]
        embed_dim: usize,
        #[serde(default)]
        signal: SignalKind,
        #[serde(default)]
        invalid_rate: f64,
    },
    Live {
        model: String,
        #[serde(default)]
        embedding_model: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default)]
        min_interval_ms: u64,
    },
}

fn default_backend_seed() -> u64 {
    7
}
fn default_n_dialogues() -> usize {
    400
}
fn default_sigma() -> f64 {
    0.1
}
fn default_embed_dim() -> usize {
    crate::gateway::synthetic::DEFAULT_EMBED_DIM
}
fn default_timeout_secs() -> u64 {
    120
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Synthetic {
            seed: default_backend_seed(),
            n_dialogues: default_n_dialogues(),
            sigma: default_sigma(),
            embed_dim: default_embed_dim(),
            signal: SignalKind::default(),
            invalid_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub n_trees: usize,
    pub max_depth: usize,
}

impl Default for HeadSettings {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        Self {
            learning_rate: sgd.learning_rate,
            batch_size: sgd.batch_size,
            epochs: sgd.epochs,
            hidden: RELU_HIDDEN,
            n_trees: DEFAULT_TREES,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

impl HeadSettings {
    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            sgd: SgdConfig {
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                epochs: self.epochs,
            },
            hidden: self.hidden,
            n_trees: self.n_trees,
            max_depth: self.max_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSettings {
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub retry_limit: u32,
}

impl Default for SamplingSettings {
    fn default() -> Self {
        let s = SamplingOptions::default();
        Self {
            temperature: s.temperature,
            max_new_tokens: s.max_new_tokens,
            retry_limit: s.retry_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub method: Method,
    /// Defaults to the question the corpus annotates.
    pub question_key: Option<String>,
    pub bot_n: u32,
    pub include_demographics: bool,
    pub seeds: Vec<u64>,
    pub train_n: usize,
    pub char_budget: usize,
    pub output_dir: PathBuf,
    /// Required for live backends; synthetic backends generate their own
    /// world when absent.
    pub corpus_path: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub parallelism: usize,
    /// Sample at temperature 0 instead of averaging `bot_n` samples.
    pub greedy: bool,
    /// Run both the greedy and the sampled setting.
    pub compare_greedy: bool,
    pub sampling: SamplingSettings,
    pub backend: BackendSpec,
    pub head: HeadSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::OneTuq,
            method: Method::Df,
            question_key: None,
            bot_n: 1,
            include_demographics: false,
            seeds: vec![1, 2, 3, 4, 5],
            train_n: 100,
            char_budget: DEFAULT_CHAR_BUDGET,
            output_dir: PathBuf::from("runs"),
            corpus_path: None,
            cache_dir: None,
            parallelism: 4,
            greedy: false,
            compare_greedy: false,
            sampling: SamplingSettings::default(),
            backend: BackendSpec::default(),
            head: HeadSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.method == Method::FtRfJ && self.task != TaskKind::Funq {
            return fail(format!("method ft_rf_j requires task funq, got {}", self.task.as_str()));
        }
        if self.bot_n < 1 {
            return fail("bot_n must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        if self.train_n < 2 {
            return fail("train_n must be at least 2".into());
        }
        if self.parallelism < 1 {
            return fail("parallelism must be at least 1".into());
        }
        if self.greedy && self.compare_greedy {
            return fail("greedy and compare_greedy are mutually exclusive".into());
        }
        if !(self.sampling.temperature >= 0.0 && self.sampling.temperature.is_finite()) {
            return fail(format!("invalid temperature {}", self.sampling.temperature));
        }
        match &self.backend {
            BackendSpec::Synthetic {
                n_dialogues,
                sigma,
                embed_dim,
                invalid_rate,
                ..
            } => {
                if self.corpus_path.is_none() && *n_dialogues < 4 {
                    return fail("synthetic n_dialogues must be at least 4".into());
                }
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    return fail(format!("invalid sigma {sigma}"));
                }
                if *embed_dim < 2 {
                    return fail("synthetic embed_dim must be at least 2".into());
                }
                if !(0.0..=1.0).contains(invalid_rate) {
                    return fail(format!("invalid_rate {invalid_rate} outside [0, 1]"));
                }
            }
            BackendSpec::Live { embedding_model, .. } => {
                if self.corpus_path.is_none() {
                    return fail("live backends need corpus_path".into());
                }
                if self.method.head_kind().is_some() && embedding_model.is_none() {
                    return fail(format!("method {} needs backend.embedding_model", self.method.as_str()));
                }
            }
        }
        Ok(())
    }

    /// Sampling used for forecasts: greedy single samples or `bot_n` draws.
    pub fn sampling_options(&self) -> SamplingOptions {
        let base = SamplingOptions {
            temperature: self.sampling.temperature,
            max_new_tokens: self.sampling.max_new_tokens,
            n_samples: self.bot_n,
            retry_limit: self.sampling.retry_limit,
        };
        if self.greedy {
            SamplingOptions {
                temperature: 0.0,
                n_samples: 1,
                ..base
            }
        } else {
            base
        }
    }

    /// One config per setting to run; `compare_greedy` yields the greedy and
    /// the sampled variant.
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        if !self.compare_greedy {
            return vec![self.clone()];
        }
        let mut greedy = self.clone();
        greedy.compare_greedy = false;
        greedy.greedy = true;
        let mut sampled = self.clone();
        sampled.compare_greedy = false;
        vec![greedy, sampled]
    }

    pub fn backend_label(&self) -> String {
        match &self.backend {
            BackendSpec::Synthetic { seed, sigma, .. } => format!("synthetic(seed={seed},sigma={sigma})"),
            BackendSpec::Live { model, .. } => model.clone(),
        }
    }
}
