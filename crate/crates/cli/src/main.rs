use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use claimcheck::evaluation::{DenominatorMode, EvalConfig, MetricReport};
use claimcheck::label::LabelScheme;
use claimcheck::pipeline::{self, EvaluateRequest, PipelineConfig, RunPaths, Stage};
use claimcheck::rationale::RationaleMode;
use claimcheck::retrieval::RetrievalMode;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "claimcheck",
    version,
    about = "Verify scientific claims against an abstract corpus"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the dataset, build the index cache and print statistics.
    Ingest(RunArgs),
    /// Train the built-in model for one stage, or all of them.
    Train {
        #[arg(long, value_parser = parse_stage)]
        stage: StageArg,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run retrieval, rationale selection and label prediction.
    Predict(RunArgs),
    /// Score a predictions file against gold claims.
    Evaluate(EvaluateArgs),
    /// Print a saved metric report.
    Report(ReportArgs),
}

#[derive(Clone)]
enum StageArg {
    One(Stage),
    All,
}

fn parse_stage(s: &str) -> Result<StageArg, String> {
    if s == "all" {
        return Ok(StageArg::All);
    }
    s.parse()
        .map(StageArg::One)
        .map_err(|e: claimcheck::Error| e.to_string())
}

macro_rules! enum_parser {
    ($name:ident, $ty:ty) => {
        fn $name(s: &str) -> Result<$ty, String> {
            serde_json::from_value(json!(s)).map_err(|e| e.to_string())
        }
    };
}

enum_parser!(parse_retrieval_mode, RetrievalMode);
enum_parser!(parse_rationale_mode, RationaleMode);
enum_parser!(parse_label_scheme, LabelScheme);
enum_parser!(parse_denominator, DenominatorMode);

/// Flags that override the config file.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long, env = "CLAIMCHECK_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Claims to predict and evaluate.
    #[arg(long)]
    claims: Option<PathBuf>,
    #[arg(long)]
    train_claims: Option<PathBuf>,
    #[arg(long)]
    dev_claims: Option<PathBuf>,
    #[arg(long)]
    merge_train_dev: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    models_dir: Option<PathBuf>,
    #[arg(long)]
    index_cache: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    /// classify, topk_baseline or rerank.
    #[arg(long, value_parser = parse_retrieval_mode)]
    retrieval_mode: Option<RetrievalMode>,
    /// binary or threshold.
    #[arg(long, value_parser = parse_rationale_mode)]
    rationale_mode: Option<RationaleMode>,
    #[arg(long)]
    rationale_threshold: Option<f64>,
    /// two_step or three_way.
    #[arg(long, value_parser = parse_label_scheme)]
    label_scheme: Option<LabelScheme>,
    #[arg(long)]
    warm_start: bool,
    #[arg(long)]
    oracle_abstracts: bool,
    #[arg(long)]
    oracle_rationales: bool,
    #[arg(long)]
    oracle_retrieved: Option<PathBuf>,
    #[arg(long)]
    no_report: bool,
}

impl RunArgs {
    fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_toml_file(p)?,
            None => PipelineConfig::default(),
        };
        let set = |slot: &mut PathBuf, v: &Option<PathBuf>| {
            if let Some(v) = v {
                *slot = v.clone();
            }
        };
        set(&mut cfg.data.corpus, &self.corpus);
        set(&mut cfg.data.claims, &self.claims);
        set(&mut cfg.output_dir, &self.output_dir);
        set(&mut cfg.models_dir, &self.models_dir);
        if self.train_claims.is_some() {
            cfg.data.train_claims = self.train_claims.clone();
        }
        if self.dev_claims.is_some() {
            cfg.data.dev_claims = self.dev_claims.clone();
        }
        if self.index_cache.is_some() {
            cfg.index_cache = self.index_cache.clone();
        }
        if self.oracle_retrieved.is_some() {
            cfg.oracle.retrieved = self.oracle_retrieved.clone();
        }
        cfg.data.merge_train_dev |= self.merge_train_dev;
        cfg.warm_start |= self.warm_start;
        cfg.oracle.abstracts |= self.oracle_abstracts;
        cfg.oracle.rationales |= self.oracle_rationales;
        cfg.report &= !self.no_report;
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(k) = self.pool_size {
            cfg.retrieval.pool_size = k;
        }
        if let Some(m) = self.retrieval_mode {
            cfg.retrieval.mode = m;
        }
        if let Some(m) = self.rationale_mode {
            cfg.rationale.mode = m;
        }
        if let Some(t) = self.rationale_threshold {
            cfg.rationale.threshold = t;
        }
        if let Some(s) = self.label_scheme {
            cfg.label.scheme = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Checks every predicted doc and sentence index against the corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Retrieval artifact; retrieval metrics use the predicted docs otherwise.
    #[arg(long)]
    retrieved: Option<PathBuf>,
    /// Label artifact; enables label accuracy and the confusion matrix.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    rationale_cap: usize,
    /// all_claims or evidence_claims_only.
    #[arg(long, value_parser = parse_denominator, default_value = "all_claims")]
    denominator: DenominatorMode,
    /// Also write the JSON report here.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding report.json.
    #[arg(long, conflicts_with = "report")]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

fn print_report(report: &MetricReport, format: Format) -> anyhow::Result<()> {
    match format {
        Format::Table => print!("{}", report.to_table()),
        Format::Json => println!("{}", serde_json::to_string_pretty(report)?),
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(args) => {
            let summary = pipeline::ingest(&args.resolve()?)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Train { stage, run } => {
            let cfg = run.resolve()?;
            let stages = match stage {
                StageArg::One(s) => vec![s],
                StageArg::All => {
                    let mut s = vec![Stage::Abstract, Stage::Rationale];
                    match cfg.label.scheme {
                        LabelScheme::TwoStep => s.extend([Stage::Neutral, Stage::Support]),
                        LabelScheme::ThreeWay => s.push(Stage::Threeway),
                    }
                    s
                }
            };
            for s in stages {
                let out = pipeline::train_stage(s, &cfg)?;
                println!("{}", serde_json::to_string(&out)?);
            }
        }
        Command::Predict(args) => {
            let out = pipeline::run_pipeline(&args.resolve()?)?;
            let summary = json!({
                "fingerprint": out.fingerprint,
                "claims": out.predictions.len(),
                "evidence_docs": out.predictions.iter().map(|p| p.evidence.len()).sum::<usize>(),
                "paths": out.paths,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(r) = &out.report {
                eprint!("{}", r.to_table());
            }
        }
        Command::Evaluate(args) => {
            let config = EvalConfig {
                rationale_cap: args.rationale_cap,
                denominator: args.denominator,
            };
            let report = pipeline::evaluate_files(&EvaluateRequest {
                gold: args.gold,
                predictions: args.predictions,
                corpus: args.corpus,
                retrieved: args.retrieved,
                labels: args.labels,
                config,
            })?;
            if let Some(path) = &args.output {
                write_json(path, &report)?;
            }
            print_report(&report, args.format)?;
        }
        Command::Report(args) => {
            let path = match (args.run_dir, args.report) {
                (Some(dir), None) => RunPaths::in_dir(&dir).report_json,
                (None, Some(p)) => p,
                _ => bail!("pass either --run-dir or --report"),
            };
            print_report(&pipeline::read_report(&path)?, args.format)?;
        }
    }
    Ok(())
}

fn write_json(path: &Path, report: &MetricReport) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<claimcheck::Error>())
        .map(claimcheck::Error::kind)
        .unwrap_or("cli")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({"error": {"kind": error_kind(&e), "message": format!("{e:#}")}});
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
