use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dialog_forge::pipeline::{Pipeline, RunConfig, Stage, MANIFEST_FILE};
use dialog_forge::store::{open_store, validate_store};
use dialog_forge::synthetic::{write_fixture, FixtureSpec};

/// Builds image-sharing dialogue datasets from text dialogues and
/// image/caption embedding stores.
#[derive(Parser)]
#[command(name = "dialog-forge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Weight of the utterance-image similarity, in [0, 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Candidates kept per utterance before filtering.
    #[arg(long)]
    k: Option<usize>,
    /// Frequency-filter percentile, in (0, 100].
    #[arg(long = "tau2-percentile")]
    tau2_percentile: Option<f64>,
    /// Images attached per utterance at most.
    #[arg(long = "max-images")]
    max_images: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)
            .with_context(|| format!("loading config {}", self.config.display()))?;
        let p = &mut config.pipeline;
        if let Some(v) = self.seed {
            p.seed = v;
        }
        if let Some(v) = self.alpha {
            p.alpha = v;
        }
        if let Some(v) = self.k {
            p.k = v;
        }
        if let Some(v) = self.tau2_percentile {
            p.tau2_percentile = v;
        }
        if let Some(v) = self.max_images {
            p.max_images_per_utterance = v;
        }
        if let Some(v) = self.threads {
            config.threads = Some(v);
        }
        if let Some(v) = &self.out {
            config.out = v.clone();
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage in order and write the run manifest.
    Run(RunArgs),
    /// Validate and deduplicate dialogues, then split them.
    Ingest(RunArgs),
    /// Drop duplicate and mismatched image-caption pairs, then split images.
    FilterSource(RunArgs),
    /// Compute z-score moments on the training split.
    StatsZ(RunArgs),
    /// Score utterances against images and keep the top k per utterance.
    Match(RunArgs),
    /// Apply the median score filter and the frequency filter.
    Filter(RunArgs),
    /// Attach surviving images to dialogue turns.
    Assemble(RunArgs),
    /// Scale and diversity statistics of the assembled dataset.
    Stats(RunArgs),
    /// Retrieval baselines and Recall@K on the evaluation split.
    Eval(RunArgs),
    /// Sweep the frequency-filter percentile.
    Ablate(RunArgs),
    /// Write a synthetic input set and config.
    Synth {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        dialogues: usize,
        #[arg(long, default_value_t = 200)]
        images: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Check an embedding store for non-finite values, zero vectors and bad ids.
    ValidateStore {
        /// Store base path; `.embs` and `.ids` are appended.
        base: PathBuf,
    },
}

fn stage_of(command: &Command) -> Option<(Stage, &RunArgs)> {
    Some(match command {
        Command::Ingest(a) => (Stage::Ingest, a),
        Command::FilterSource(a) => (Stage::FilterSource, a),
        Command::StatsZ(a) => (Stage::StatsZ, a),
        Command::Match(a) => (Stage::Match, a),
        Command::Filter(a) => (Stage::Filter, a),
        Command::Assemble(a) => (Stage::Assemble, a),
        Command::Stats(a) => (Stage::Stats, a),
        Command::Eval(a) => (Stage::Eval, a),
        Command::Ablate(a) => (Stage::Ablate, a),
        _ => return None,
    })
}

fn execute(cli: Cli) -> Result<()> {
    if let Some((stage, args)) = stage_of(&cli.command) {
        let mut pipeline = Pipeline::new(args.load()?, true)?;
        pipeline.run_stage(stage)?;
        return Ok(());
    }
    match cli.command {
        Command::Run(args) => {
            let mut pipeline = Pipeline::new(args.load()?, false)?;
            let manifest = pipeline.run_all()?;
            if !manifest.all_completed() {
                bail!("pipeline finished with incomplete stages");
            }
            println!("{}", pipeline.out_dir().join(MANIFEST_FILE).display());
        }
        Command::Synth {
            dir,
            dialogues,
            images,
            dim,
            seed,
        } => {
            let spec = FixtureSpec {
                dialogues,
                images,
                dim,
                seed,
                ..FixtureSpec::default()
            };
            println!("{}", write_fixture(&dir, &spec)?.display());
        }
        Command::ValidateStore { base } => {
            let store = open_store(&base)?;
            let report = validate_store(&store);
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, &report)?;
            writeln!(stdout)?;
            if !report.ok {
                bail!("store {} failed validation", base.display());
            }
        }
        _ => unreachable!("stage commands handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIALOG_FORGE_LOG", "warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
