//! Running one experiment cell: estimates, per-seed fitting, pooled scoring
//! and persistence.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{BackendSpec, ExperimentConfig, Method, TaskKind};
use super::report::emit_report;
use super::synth::{synth_world, synthetic_truth};
use super::HarnessError;
use crate::calibrate::{calibrate_corpus, CalibratedTarget};
use crate::corpus::{load_corpus, split_ids, Corpus};
use crate::forecast::{bag_of_thoughts, direct_forecast, ForecastEstimate};
use crate::gateway::live::{LiveBackend, LiveConfig};
use crate::gateway::synthetic::SyntheticBackend;
use crate::gateway::{build_prompt, Cache, FeatureVector, Gateway, PromptBundle, PromptOptions, Task};
use crate::metrics::{micro_average, RegressionReport, SplitResult};
use crate::regress::{
    fit_head_with, fit_joint_head_with, fit_linear_scaling, fit_platt_scaling, join_features, predict_head, HeadKind,
    RegressError, DEFAULT_EPSILON, PROBABILITY_RANGE, SIGNED_RANGE,
};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub split_hash: String,
    /// Test ids in the order of `result.targets`.
    pub test_ids: Vec<String>,
    pub result: SplitResult,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_secs: f64,
    pub cache_hit_ratio: f64,
    pub backend_calls: u64,
}

/// Everything a run produced. `timing` is persisted separately so the rest
/// is byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub question_key: String,
    pub corpus_hash: String,
    pub backend_id: String,
    pub splits: Vec<SplitRecord>,
    /// Raw forecasts per dialogue and prompt side, sorted.
    pub estimates: Vec<ForecastEstimate>,
    pub report: RegressionReport,
    #[serde(skip)]
    pub timing: Timing,
}

impl RunRecord {
    /// Pools the stored per-split predictions again.
    pub fn rescore(&self) -> Result<RegressionReport, HarnessError> {
        let results: Vec<SplitResult> = self.splits.iter().map(|s| s.result.clone()).collect();
        Ok(micro_average(&results)?)
    }
}

/// `config` without the settings that only describe where and how fast a
/// run executes.
pub fn portable_config(config: &ExperimentConfig) -> ExperimentConfig {
    let mut portable = config.clone();
    portable.output_dir = PathBuf::new();
    portable.cache_dir = None;
    portable.parallelism = 1;
    portable
}

/// Content hash of the settings that determine results, the corpus and the
/// code version.
pub fn run_id(config: &ExperimentConfig, corpus_hash: &str) -> String {
    let identity = portable_config(config);
    let mut hasher = Sha256::new();
    hasher.update(b"tomuq-run\0");
    hasher.update(serde_json::to_vec(&identity).expect("config serializes"));
    hasher.update([0]);
    hasher.update(corpus_hash.as_bytes());
    hasher.update([0]);
    hasher.update(CODE_VERSION.as_bytes());
    hex::encode(hasher.finalize())[..16].to_string()
}

fn infer_question_key(corpus: &Corpus) -> Result<String, HarnessError> {
    let mut keys: Vec<&str> = corpus
        .records()
        .iter()
        .flat_map(|r| r.annotations.iter().map(|a| a.question_key.as_str()))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    match keys.as_slice() {
        [only] => Ok(only.to_string()),
        [] => Err(HarnessError::Config("corpus has no annotations".into())),
        many => Err(HarnessError::Config(format!(
            "corpus annotates several questions ({}); set question_key",
            many.join(", ")
        ))),
    }
}

/// Target of one prompt side.
fn side_target(target: &CalibratedTarget, side: Task) -> Option<f64> {
    match side {
        Task::OneTuq | Task::FunqWorldSide => target.p,
        Task::TwoTuq => target.forecast,
    }
}

fn task_target(target: &CalibratedTarget, task: TaskKind) -> Option<f64> {
    match task {
        TaskKind::OneTuq => target.p,
        TaskKind::TwoTuq => target.forecast,
        TaskKind::Funq => target.fun,
    }
}

struct Setup {
    corpus: Corpus,
    question_key: String,
    targets: BTreeMap<String, CalibratedTarget>,
    gateway: Gateway,
}

fn setup(config: &ExperimentConfig) -> Result<Setup, HarnessError> {
    let corpus = match (&config.corpus_path, &config.backend) {
        (Some(path), _) => load_corpus(path, None)?,
        (
            None,
            BackendSpec::Synthetic {
                seed,
                n_dialogues,
                sigma,
                ..
            },
        ) => synth_world(*seed, *n_dialogues, *sigma).corpus,
        (None, BackendSpec::Live { .. }) => return Err(HarnessError::Config("live backends need corpus_path".into())),
    };
    let question_key = match &config.question_key {
        Some(key) => key.clone(),
        None => infer_question_key(&corpus)?,
    };
    let calibrated = calibrate_corpus(&corpus, &question_key)?;
    let mut gateway = match &config.backend {
        BackendSpec::Synthetic {
            seed,
            sigma,
            embed_dim,
            signal,
            invalid_rate,
            ..
        } => {
            let truth = synthetic_truth(&calibrated, *seed, *signal);
            let backend = Arc::new(
                SyntheticBackend::new(*seed, *sigma, Arc::new(truth))
                    .with_embed_dim(*embed_dim)
                    .with_invalid_rate(*invalid_rate),
            );
            Gateway::new(backend.clone()).with_embedding(backend)
        }
        BackendSpec::Live {
            model,
            embedding_model,
            timeout_secs,
            min_interval_ms,
        } => {
            let mut live = LiveConfig::from_env(model.clone()).map_err(HarnessError::Backend)?;
            live.embedding_model = embedding_model.clone();
            live.timeout = Duration::from_secs(*timeout_secs);
            live.min_interval = Duration::from_millis(*min_interval_ms);
            let backend = Arc::new(LiveBackend::new(live).map_err(HarnessError::Backend)?);
            Gateway::new(backend.clone())
                .with_embedding(backend)
                .with_retry_delay(Duration::from_millis(500))
        }
    };
    if let Some(dir) = &config.cache_dir {
        let cache = Cache::open(dir).map_err(|source| HarnessError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        gateway = gateway.with_cache(cache);
    }
    let targets = calibrated.into_iter().map(|t| (t.dialogue_id.clone(), t)).collect();
    Ok(Setup {
        corpus,
        question_key,
        targets,
        gateway,
    })
}

/// Per-dialogue inputs to the fitting stage, keyed by prompt side.
enum Inputs {
    Forecasts(BTreeMap<(String, Task), ForecastEstimate>),
    Embeddings(BTreeMap<(String, Task), FeatureVector>),
}

enum Item {
    Forecast(ForecastEstimate),
    Embedding(FeatureVector),
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row).expect("row serializes"));
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn collect_inputs(
    config: &ExperimentConfig,
    setup: &Setup,
    ids: &[String],
    run_dir: &Path,
) -> Result<Inputs, HarnessError> {
    let options = PromptOptions {
        include_demographics: config.include_demographics,
        char_budget: config.char_budget,
    };
    let mut prompts: Vec<PromptBundle> = Vec::new();
    for id in ids {
        let record = setup.corpus.get(id).expect("eligible ids come from the corpus");
        for &side in config.task.prompt_tasks() {
            let prompt =
                build_prompt(side, record, &setup.question_key, &options).map_err(|source| HarnessError::Prompt {
                    dialogue_id: id.clone(),
                    source,
                })?;
            prompts.push(prompt);
        }
    }
    let sampling = config.sampling_options();
    let embed = config.method.head_kind().is_some();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let gateway = &setup.gateway;
    let results: Vec<Result<Item, HarnessError>> = pool.install(|| {
        prompts
            .par_iter()
            .map(|prompt| {
                let stage = format!("{}:{}", if embed { "embed" } else { "forecast" }, prompt.task.as_str());
                let wrap = |source: HarnessError| HarnessError::Stage {
                    dialogue_id: prompt.dialogue_id.clone(),
                    stage: stage.clone(),
                    source: Box::new(source),
                };
                if embed {
                    gateway
                        .embed(prompt)
                        .map(Item::Embedding)
                        .map_err(|e| wrap(HarnessError::Gateway(e)))
                } else if sampling.n_samples == 1 {
                    direct_forecast(gateway, prompt, &sampling)
                        .map(Item::Forecast)
                        .map_err(|e| wrap(e.into()))
                } else {
                    bag_of_thoughts(gateway, prompt, &sampling)
                        .map(Item::Forecast)
                        .map_err(|e| wrap(e.into()))
                }
            })
            .collect()
    });

    let mut first_error = None;
    let mut forecasts = BTreeMap::new();
    let mut embeddings = BTreeMap::new();
    for (prompt, result) in prompts.iter().zip(results) {
        let key = (prompt.dialogue_id.clone(), prompt.task);
        match result {
            Ok(Item::Forecast(f)) => {
                forecasts.insert(key, f);
            }
            Ok(Item::Embedding(v)) => {
                embeddings.insert(key, v);
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(err) = first_error {
        create_dir(run_dir)?;
        let partial: Vec<&ForecastEstimate> = forecasts.values().collect();
        write_jsonl(&run_dir.join("partial_estimates.jsonl"), &partial)?;
        return Err(err);
    }
    Ok(if embed {
        Inputs::Embeddings(embeddings)
    } else {
        Inputs::Forecasts(forecasts)
    })
}

fn fit_error(stage: &str, seed: u64) -> impl Fn(RegressError) -> HarnessError + '_ {
    move |source| HarnessError::Fit {
        stage: format!("{stage} (seed {seed})"),
        source,
    }
}

/// Test predictions for one split.
fn predict_split(
    config: &ExperimentConfig,
    setup: &Setup,
    inputs: &Inputs,
    train: &[String],
    test: &[String],
    seed: u64,
) -> Result<Vec<f64>, HarnessError> {
    let sides = config.task.prompt_tasks();
    let target_of = |id: &String, side: Task| side_target(&setup.targets[id], side).expect("eligible");
    let compose = |per_side: Vec<Vec<f64>>| -> Vec<f64> {
        match per_side.as_slice() {
            [single] => single.clone(),
            [interlocutor, world] => interlocutor.iter().zip(world).map(|(a, b)| a - b).collect(),
            _ => unreachable!("one or two prompt sides"),
        }
    };
    match inputs {
        Inputs::Forecasts(forecasts) => {
            let value = |id: &String, side: Task| forecasts[&(id.clone(), side)].value;
            let raw = |ids: &[String]| -> Vec<f64> {
                compose(
                    sides
                        .iter()
                        .map(|&s| ids.iter().map(|id| value(id, s)).collect())
                        .collect(),
                )
            };
            match config.method {
                Method::Df => Ok(raw(test)),
                // The composed false-uncertainty estimate is scaled as one
                // signed quantity.
                Method::DfLs if config.task == TaskKind::Funq => {
                    let pairs: Vec<(f64, f64)> = raw(train)
                        .into_iter()
                        .zip(train.iter().map(|id| setup.targets[id].fun.expect("eligible")))
                        .collect();
                    let params = fit_linear_scaling(&pairs, SIGNED_RANGE).map_err(fit_error("linear scaling", seed))?;
                    Ok(raw(test).into_iter().map(|x| params.apply(x)).collect())
                }
                Method::DfLs | Method::DfPs => {
                    let mut per_side = Vec::new();
                    for &side in sides {
                        let pairs: Vec<(f64, f64)> =
                            train.iter().map(|id| (value(id, side), target_of(id, side))).collect();
                        let params = if config.method == Method::DfLs {
                            fit_linear_scaling(&pairs, PROBABILITY_RANGE).map_err(fit_error("linear scaling", seed))?
                        } else {
                            fit_platt_scaling(&pairs, DEFAULT_EPSILON).map_err(fit_error("platt scaling", seed))?
                        };
                        per_side.push(test.iter().map(|id| params.apply(value(id, side))).collect());
                    }
                    Ok(compose(per_side))
                }
                other => unreachable!("{} uses embeddings", other.as_str()),
            }
        }
        Inputs::Embeddings(embeddings) => {
            let head_config = config.head.head_config();
            let features = |ids: &[String], side: Task| -> Vec<FeatureVector> {
                ids.iter().map(|id| embeddings[&(id.clone(), side)].clone()).collect()
            };
            let kind = config.method.head_kind().expect("embedding method");
            if kind == HeadKind::RandomForestJoint {
                let fun: Vec<f64> = train
                    .iter()
                    .map(|id| setup.targets[id].fun.expect("eligible"))
                    .collect();
                let head = fit_joint_head_with(
                    &features(train, sides[0]),
                    &features(train, sides[1]),
                    &fun,
                    seed,
                    &head_config,
                )
                .map_err(fit_error("joint head", seed))?;
                let joined = join_features(&features(test, sides[0]), &features(test, sides[1]));
                return joined
                    .iter()
                    .map(|f| predict_head(&head, f).map_err(fit_error("joint head", seed)))
                    .collect();
            }
            let mut per_side = Vec::new();
            for &side in sides {
                let targets: Vec<f64> = train.iter().map(|id| target_of(id, side)).collect();
                let head = fit_head_with(&features(train, side), &targets, kind, seed, &head_config)
                    .map_err(fit_error("head", seed))?;
                let preds = features(test, side)
                    .iter()
                    .map(|f| predict_head(&head, f).map_err(fit_error("head", seed)))
                    .collect::<Result<Vec<f64>, _>>()?;
                per_side.push(preds);
            }
            Ok(compose(per_side))
        }
    }
}

/// Runs one configuration. Estimates are persisted under the run directory
/// if the estimation stage fails; complete runs are persisted by
/// [`persist_run`].
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    config.validate()?;
    let started = Instant::now();
    let setup = setup(config)?;
    let corpus_hash = setup.corpus.content_hash();
    let run_id = run_id(config, &corpus_hash);
    let run_dir = config.output_dir.join(&run_id);

    let eligible: Vec<String> = setup
        .targets
        .values()
        .filter(|t| task_target(t, config.task).is_some())
        .filter(|t| config.task.prompt_tasks().iter().all(|&s| side_target(t, s).is_some()))
        .map(|t| t.dialogue_id.clone())
        .collect();
    log::info!("run {run_id}: {} eligible dialogues", eligible.len());
    let inputs = collect_inputs(config, &setup, &eligible, &run_dir)?;

    let mut splits = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let split = split_ids(&eligible, seed, config.train_n)?;
        let train: Vec<String> = split.train_ids.iter().cloned().collect();
        let test: Vec<String> = split.test_ids.iter().cloned().collect();
        let target = |id: &String| task_target(&setup.targets[id], config.task).expect("eligible");
        let train_targets: Vec<f64> = train.iter().map(target).collect();
        let train_mean = train_targets.iter().sum::<f64>() / train_targets.len() as f64;
        let preds = predict_split(config, &setup, &inputs, &train, &test, seed)?;
        splits.push(SplitRecord {
            seed,
            split_hash: split.content_hash(),
            result: SplitResult {
                targets: test.iter().map(target).collect(),
                preds,
                train_mean,
            },
            test_ids: test,
        });
    }
    let results: Vec<SplitResult> = splits.iter().map(|s| s.result.clone()).collect();
    let report = micro_average(&results)?;
    let estimates = match inputs {
        Inputs::Forecasts(f) => f.into_values().collect(),
        Inputs::Embeddings(_) => Vec::new(),
    };
    let stats = setup.gateway.stats();
    Ok(RunRecord {
        run_id,
        code_version: CODE_VERSION.to_string(),
        config: config.clone(),
        question_key: setup.question_key.clone(),
        corpus_hash,
        backend_id: setup.gateway.completion_backend_id().to_string(),
        splits,
        estimates,
        report,
        timing: Timing {
            wall_clock_secs: started.elapsed().as_secs_f64(),
            cache_hit_ratio: stats.cache_hit_ratio(),
            backend_calls: stats.backend_calls(),
        },
    })
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    seed: u64,
    dialogue_id: &'a str,
    target: f64,
    prediction: f64,
}

/// Writes `run.json`, `estimates.jsonl`, `predictions.jsonl`, `report.csv`,
/// `report.txt` and `timing.json` under `<output_dir>/<run_id>/`. The stored
/// config omits the output location, cache and parallelism.
pub fn persist_run(record: &RunRecord) -> Result<PathBuf, HarnessError> {
    let dir = record.config.output_dir.join(&record.run_id);
    create_dir(&dir)?;
    let stored = RunRecord {
        config: portable_config(&record.config),
        ..record.clone()
    };
    let run_json = serde_json::to_string_pretty(&stored).expect("record serializes");
    write_file(&dir.join("run.json"), run_json.as_bytes())?;
    write_jsonl(&dir.join("estimates.jsonl"), &record.estimates)?;
    let predictions: Vec<PredictionRow> = record
        .splits
        .iter()
        .flat_map(|s| {
            s.test_ids
                .iter()
                .zip(s.result.targets.iter().zip(&s.result.preds))
                .map(|(id, (t, p))| PredictionRow {
                    seed: s.seed,
                    dialogue_id: id,
                    target: *t,
                    prediction: *p,
                })
        })
        .collect();
    write_jsonl(&dir.join("predictions.jsonl"), &predictions)?;
    let report = emit_report(std::slice::from_ref(record))?;
    write_file(&dir.join("report.csv"), report.csv.as_bytes())?;
    write_file(&dir.join("report.txt"), report.text.as_bytes())?;
    let timing = serde_json::to_string_pretty(&record.timing).expect("timing serializes");
    write_file(&dir.join("timing.json"), timing.as_bytes())?;
    Ok(dir)
}

/// Loads `run.json` (and `timing.json` when present) from a run directory.
pub fn load_run(dir: &Path) -> Result<RunRecord, HarnessError> {
    let path = dir.join("run.json");
    let text = fs::read_to_string(&path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut record: RunRecord =
        serde_json::from_str(&text).map_err(|e| HarnessError::Record(format!("{}: {e}", path.display())))?;
    if let Ok(timing) = fs::read_to_string(dir.join("timing.json")) {
        record.timing = serde_json::from_str(&timing).unwrap_or_default();
    }
    Ok(record)
}
