use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tomuq::calibrate::{calibrate_corpus_with, export_targets, TieRule};
use tomuq::corpus::{load_corpus, save_corpus, CorpusTag};
use tomuq::harness::{
    emit_report, load_run, persist_run, run_experiment, synth_world, ExperimentConfig, HarnessError, Method, TaskKind,
};

const ENV_CACHE_DIR: &str = "TOMUQ_CACHE_DIR";

#[derive(Parser)]
#[command(name = "tomuq", version, about = "Theory-of-Mind uncertainty quantification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus file and rewrite it in normalized form.
    Import {
        #[arg(long)]
        input: PathBuf,
        /// Require every record to carry this corpus tag.
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate a corpus' Likert annotations and export the targets.
    Calibrate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        question: String,
        /// midrank (default) or strict
        #[arg(long, default_value = "midrank")]
        tie_rule: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment and persist its record and report.
    Run(RunArgs),
    /// Print a report over one or more run directories.
    Report {
        runs: Vec<PathBuf>,
        /// Write the CSV here instead of printing the text table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// 1tuq, 2tuq or funq
    #[arg(long)]
    task: Option<String>,
    /// df, df_ls, df_ps, ft_l, ft_nn, ft_rf or ft_rf_j
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    bot_n: Option<u32>,
    #[arg(long)]
    demographics: bool,
    /// Comma-separated split seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    train_n: Option<usize>,
    #[arg(long)]
    greedy: bool,
    /// Run the greedy and the sampled setting side by side.
    #[arg(long)]
    compare_greedy: bool,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory for run records.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_error(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn build_config(args: RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(task) = &args.task {
        config.task = TaskKind::parse(task).ok_or_else(|| config_error(format!("unknown task {task:?}")))?;
    }
    if let Some(method) = &args.method {
        config.method = Method::parse(method).ok_or_else(|| config_error(format!("unknown method {method:?}")))?;
    }
    if let Some(n) = args.bot_n {
        config.bot_n = n;
    }
    if args.demographics {
        config.include_demographics = true;
    }
    if let Some(seeds) = args.seeds {
        config.seeds = seeds;
    }
    if let Some(n) = args.train_n {
        config.train_n = n;
    }
    if args.greedy {
        config.greedy = true;
    }
    if args.compare_greedy {
        config.compare_greedy = true;
    }
    if args.corpus.is_some() {
        config.corpus_path = args.corpus;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    if config.cache_dir.is_none() {
        config.cache_dir = std::env::var_os(ENV_CACHE_DIR).map(PathBuf::from);
    }
    config.validate()?;
    Ok(config)
}

fn io_error(path: &std::path::Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Import { input, tag, out } => {
            let tag = tag
                .map(|t| {
                    serde_json::from_value::<CorpusTag>(serde_json::Value::String(t.clone()))
                        .map_err(|_| config_error(format!("unknown corpus tag {t:?}")))
                })
                .transpose()?;
            let corpus = load_corpus(&input, tag)?;
            save_corpus(&out, &corpus)?;
            println!("{} dialogues, content hash {}", corpus.len(), corpus.content_hash());
        }
        Command::Calibrate {
            corpus,
            question,
            tie_rule,
            out,
        } => {
            let rule = match tie_rule.as_str() {
                "midrank" => TieRule::Midrank,
                "strict" => TieRule::Strict,
                other => return Err(config_error(format!("unknown tie rule {other:?}"))),
            };
            let corpus = load_corpus(&corpus, None)?;
            let targets = calibrate_corpus_with(&corpus, &question, rule)?;
            export_targets(&out, &targets)?;
            println!("{} targets written to {}", targets.len(), out.display());
        }
        Command::Run(args) => {
            let config = build_config(args)?;
            let mut records = Vec::new();
            for variant in config.expand() {
                let record = run_experiment(&variant)?;
                let dir = persist_run(&record)?;
                println!("{}", dir.display());
                records.push(record);
            }
            print!("{}", emit_report(&records)?.text);
        }
        Command::Report { runs, out } => {
            if runs.is_empty() {
                return Err(config_error("no run directories given"));
            }
            let records = runs.iter().map(|dir| load_run(dir)).collect::<Result<Vec<_>, _>>()?;
            let report = emit_report(&records)?;
            match out {
                Some(path) => std::fs::write(&path, report.csv).map_err(io_error(&path))?,
                None => print!("{}", report.text),
            }
        }
        Command::Synth { seed, n, sigma, out } => {
            if n < 4 {
                return Err(config_error("a synthetic world needs at least 4 dialogues"));
            }
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(config_error(format!("invalid sigma {sigma}")));
            }
            let world = synth_world(seed, n, sigma);
            save_corpus(&out, &world.corpus)?;
            println!(
                "{} dialogues, content hash {}",
                world.corpus.len(),
                world.corpus.content_hash()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
