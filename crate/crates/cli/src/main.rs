use std::path::PathBuf;
use std::process::ExitCode;

use akirisk::error::{Error, Result};
use akirisk::models::Family;
use akirisk::pipeline::{render_report, with_threads, Pipeline, PipelineConfig, StageOutcome};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "akirisk",
    version,
    about = "Creatinine-elevation risk pipeline for cirrhotic ICU stays"
)]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Artifact directory.
    #[arg(
        long,
        global = true,
        env = "AKIRISK_OUT_DIR",
        default_value = "akirisk-out"
    )]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort from the config's `synth` section.
    Synth,
    /// Apply the screening funnel and derive labels.
    Cohort,
    /// Split, filter, impute and scale.
    Preprocess,
    /// LASSO feature selection and Welch audits.
    Select,
    /// Tune and fit one model family.
    Train {
        #[arg(long, value_parser = parse_family)]
        family: Family,
    },
    /// Test-set metrics for every configured family.
    Evaluate,
    /// Shapley attributions and ALE curves.
    Explain,
    /// Leave-one-feature-out ablation.
    Ablate,
    /// Render SVG figures from the CSV artifacts.
    Report,
    /// Every stage in order.
    Run,
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    Family::parse(s).map_err(|e| e.to_string())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = PipelineConfig::load(path).map_err(|e| match e {
        Error::MissingArtifact(p) => {
            Error::Config(format!("config file {} not found", p.display()))
        }
        other => other,
    })?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    if matches!(cli.command, Command::Report) && cli.config.is_none() {
        let written = with_threads(cli.threads, || render_report(&cli.out_dir))??;
        for p in written {
            println!("{}", p.display());
        }
        return Ok(());
    }
    let cfg = load_config(cli)?;
    let threads = cfg.threads;
    let pipeline = Pipeline::new(cfg, &cli.out_dir);
    let outcome = with_threads(threads, || -> Result<Option<StageOutcome>> {
        Ok(Some(match &cli.command {
            Command::Synth => pipeline.synth()?,
            Command::Cohort => pipeline.cohort()?,
            Command::Preprocess => pipeline.preprocess()?,
            Command::Select => pipeline.select()?,
            Command::Train { family } => pipeline.train(*family)?,
            Command::Evaluate => pipeline.evaluate()?,
            Command::Explain => pipeline.explain()?,
            Command::Ablate => pipeline.ablate()?,
            Command::Report => pipeline.report()?,
            Command::Run => {
                pipeline.run()?;
                return Ok(None);
            }
        }))
    })??;
    match outcome {
        Some(StageOutcome::Skipped) => eprintln!("up to date: {}", cli.out_dir.display()),
        _ => eprintln!("artifacts in {}", cli.out_dir.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
