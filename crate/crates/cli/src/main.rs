//! Pipeline driver. Each subcommand runs one stage over JSONL
//! artifacts so experiments are resumable; `run-all` chains every
//! stage. Data goes to stdout, progress and errors to stderr, and the
//! exit code is 0 only when every item produced a record.

mod fixture;

use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use polyconf::backend::ResponseCache;
use polyconf::lang::LanguageCode;
use polyconf::pipeline::{Pipeline, PipelineConfig};
use polyconf::refine::FeedbackPolicy;
use polyconf::report::Report;
use polyconf::types::ConfidenceMethod;

#[derive(Parser)]
#[command(
    name = "polyconf",
    version,
    about = "Multilingual confidence estimation for question answering"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Global flags. Anything set here wins over the config file.
#[derive(Args)]
struct Overrides {
    /// Pipeline config file (JSON); required for stage commands.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory receiving stage artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Cache backend responses under this directory.
    #[arg(long, global = true, value_name = "DIR")]
    cache_dir: Option<PathBuf>,
    /// Append every backend exchange to this JSONL log.
    #[arg(long, global = true, value_name = "FILE")]
    audit: Option<PathBuf>,
    /// Refinement policy: fixed:<k> or random:<seed>.
    #[arg(long, global = true)]
    policy: Option<FeedbackPolicy>,
    /// Seed for review-sheet sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent backend requests per stage.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Best-agreeing translations kept per language.
    #[arg(long, global = true)]
    top_n: Option<usize>,
    /// Translation pairs sampled into the review sheet.
    #[arg(long, global = true)]
    review_sample: Option<usize>,
    /// English source dataset (JSONL) for build-dataset.
    #[arg(long, global = true, value_name = "FILE")]
    source: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Dual-translate the English source and filter by agreement.
    BuildDataset,
    /// Generate one answer per item and language.
    Generate {
        /// Restrict to these languages (default: all configured).
        #[arg(long)]
        language: Vec<LanguageCode>,
    },
    /// Score answers with the configured confidence methods.
    Score {
        /// Restrict to these methods (default: all configured).
        #[arg(long)]
        method: Vec<ConfidenceMethod>,
        /// Restrict to these languages (default: all configured).
        #[arg(long)]
        language: Vec<LanguageCode>,
    },
    /// Combine per-language scores into cross-lingual records.
    Aggregate {
        /// Restrict to one named grouping (default: all configured).
        #[arg(long)]
        grouping: Option<String>,
    },
    /// Run one confidence-gated refinement pass.
    Refine,
    /// Judge answers and write evaluation records.
    Evaluate,
    /// Assemble the report from existing artifacts.
    Report {
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Run every stage in order.
    RunAll {
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Write the bundled 50-item three-language demo fixture.
    MakeFixture {
        /// Target directory for source_en.jsonl, mock_script.json,
        /// and config.json.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Delete cached backend responses.
    PurgeCache {
        /// Only purge entries for this model id.
        #[arg(long)]
        model: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

enum Outcome {
    Complete,
    Incomplete,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Incomplete) => ExitCode::from(1),
        Err(err) => {
            let message = err.to_string().replace('\n', " ");
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome, Box<dyn Error>> {
    if let Command::MakeFixture { out } = &cli.command {
        fixture::write_fixture(out)?;
        eprintln!("fixture written to {}", out.display());
        return Ok(Outcome::Complete);
    }

    let config = load_config(&cli.overrides)?;

    if let Command::PurgeCache { model } = &cli.command {
        let dir = config
            .cache_dir
            .as_ref()
            .ok_or("no cache directory configured; pass --cache-dir")?;
        let purged = ResponseCache::open(dir)?.purge(model.as_deref())?;
        eprintln!("purged {purged} cached responses");
        return Ok(Outcome::Complete);
    }

    let pipeline = Pipeline::new(config)?;
    let mut stages = Vec::new();
    match cli.command {
        Command::BuildDataset => stages.push(pipeline.build_dataset()?),
        Command::Generate { language } => {
            stages.push(pipeline.generate(selection(&language))?)
        }
        Command::Score { method, language } => {
            stages.push(pipeline.score(selection(&method), selection(&language))?)
        }
        Command::Aggregate { grouping } => {
            stages.push(pipeline.aggregate(grouping.as_deref())?)
        }
        Command::Refine => stages.push(pipeline.refine()?),
        Command::Evaluate => stages.push(pipeline.evaluate()?),
        Command::Report { format } => {
            let (report, stage) = pipeline.assemble_report()?;
            stages.push(stage);
            print_report(&report, format);
        }
        Command::RunAll { format } => {
            let (report, all) = pipeline.run_all()?;
            stages.extend(all);
            print_report(&report, format);
        }
        Command::MakeFixture { .. } | Command::PurgeCache { .. } => unreachable!(),
    }

    let mut outcome = Outcome::Complete;
    for stage in &stages {
        eprintln!("stage {}: {}/{} records", stage.stage, stage.produced, stage.expected);
        if !stage.complete() {
            eprintln!(
                "error: stage {} incomplete ({}/{} records)",
                stage.stage, stage.produced, stage.expected
            );
            outcome = Outcome::Incomplete;
        }
    }
    Ok(outcome)
}

fn load_config(overrides: &Overrides) -> Result<PipelineConfig, Box<dyn Error>> {
    let path = overrides.config.as_ref().ok_or("--config is required for this command")?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(dir) = &overrides.data_dir {
        config.data_dir = dir.clone();
    }
    if let Some(dir) = &overrides.cache_dir {
        config.cache_dir = Some(dir.clone());
    }
    if let Some(path) = &overrides.audit {
        config.audit_log = Some(path.clone());
    }
    if let Some(policy) = &overrides.policy {
        config.policy = policy.clone();
    }
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(limit) = overrides.concurrency {
        config.concurrency = limit;
    }
    if let Some(top_n) = overrides.top_n {
        config.top_n = top_n;
    }
    if let Some(sample) = overrides.review_sample {
        config.review_sample = sample;
    }
    if let Some(path) = &overrides.source {
        config.source = Some(path.clone());
    }
    Ok(config)
}

fn selection<T>(values: &[T]) -> Option<&[T]> {
    if values.is_empty() {
        None
    } else {
        Some(values)
    }
}

fn print_report(report: &Report, format: Format) {
    match format {
        Format::Table => print!("{}", report.to_text()),
        Format::Json => print!("{}", report.to_json()),
        Format::Csv => print!("{}", report.to_csv()),
    }
}
