//! Command-line workflow over `plantsplat`: dataset preparation, training,
//! rendering, evaluation, trait extraction and synthetic captures.
//!
//! Every subcommand writes into its `--out` run directory and finishes by
//! listing what it produced in `artifacts.json`.

mod artifacts;
pub mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use plantsplat::error::ErrorFamily;
use plantsplat::io::ConfigFile;
use plantsplat::optim::{EvalTarget, TrainMode};
use plantsplat::{Error, Result};

pub use artifacts::{collect_artifacts, Artifact, ArtifactManifest, ARTIFACTS_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RunMode {
    Baseline,
    ObjectCentric,
    /// Train on full frames, apply the masks only when scoring and exporting.
    #[value(alias = "pbr")]
    PostBackgroundRemoval,
}

impl RunMode {
    pub fn train_mode(self) -> TrainMode {
        match self {
            RunMode::ObjectCentric => TrainMode::ObjectCentric,
            RunMode::Baseline | RunMode::PostBackgroundRemoval => TrainMode::Baseline,
        }
    }

    pub fn eval_target(self) -> EvalTarget {
        match self {
            RunMode::Baseline => EvalTarget::Full,
            RunMode::ObjectCentric | RunMode::PostBackgroundRemoval => EvalTarget::MaskedBoth,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RunMode::Baseline => "baseline",
            RunMode::ObjectCentric => "object-centric",
            RunMode::PostBackgroundRemoval => "post-background-removal",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Globals {
    /// TOML file with optional `[train]` and `[traits]` tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<RunMode>,
}

impl Globals {
    pub fn config_file(&self) -> Result<ConfigFile> {
        match &self.config {
            Some(p) => ConfigFile::read(p),
            None => Ok(ConfigFile::default()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "plantsplat", version, about = "Object-centric Gaussian splatting and plant trait extraction")]
pub struct Cli {
    #[command(flatten)]
    pub globals: Globals,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Downsample registered frames and write a manifest with a seeded split.
    Prepare(commands::PrepareArgs),
    /// Optimize a splat scene and write checkpoints and the training log.
    Train(commands::TrainArgs),
    /// Render a checkpoint from the cameras of a manifest.
    Render(commands::RenderArgs),
    /// Score a checkpoint on the test views of a manifest.
    Eval(commands::EvalArgs),
    /// Measure height and crown widths of one or more reconstructions.
    Traits(commands::TraitsArgs),
    /// Write a synthetic capture laid out like a prepared dataset.
    Synth(commands::SynthArgs),
    /// Mask a full-scene checkpoint after training: masked metrics and a pruned cloud.
    Pbr(commands::PbrArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Prepare(_) => "prepare",
            Command::Train(_) => "train",
            Command::Render(_) => "render",
            Command::Eval(_) => "eval",
            Command::Traits(_) => "traits",
            Command::Synth(_) => "synth",
            Command::Pbr(_) => "pbr",
        }
    }

    fn out_dir(&self) -> &std::path::Path {
        match self {
            Command::Prepare(a) => &a.out,
            Command::Train(a) => &a.out,
            Command::Render(a) => &a.out,
            Command::Eval(a) => &a.out,
            Command::Traits(a) => &a.out,
            Command::Synth(a) => &a.out,
            Command::Pbr(a) => &a.out,
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ArtifactManifest> {
    let g = &cli.globals;
    match &cli.command {
        Command::Prepare(a) => commands::prepare(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Render(a) => commands::render(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::Traits(a) => commands::traits(g, a),
        Command::Synth(a) => commands::synth(g, a),
        Command::Pbr(a) => commands::pbr(g, a),
    }?;
    let manifest = ArtifactManifest {
        command: cli.command.name().into(),
        mode: g.mode.map(|m| m.name().into()),
        seed: g.seed,
        files: collect_artifacts(cli.command.out_dir())?,
    };
    manifest.write(cli.command.out_dir())?;
    Ok(manifest)
}

/// Runs one subcommand, inside a dedicated thread pool when `--threads` is set.
pub fn run(cli: &Cli) -> Result<ArtifactManifest> {
    match cli.globals.threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| dispatch(cli)),
        None => dispatch(cli),
    }
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_PIPELINE: i32 = 5;
pub const EXIT_IO: i32 = 6;

/// Process exit code for an error. Usage errors from argument parsing also
/// exit with [`EXIT_CONFIG`].
pub fn exit_code(err: &Error) -> i32 {
    match err.family() {
        ErrorFamily::Config => EXIT_CONFIG,
        ErrorFamily::Parse => EXIT_PARSE,
        ErrorFamily::Numerical => EXIT_NUMERICAL,
        ErrorFamily::Pipeline => EXIT_PIPELINE,
        ErrorFamily::Io => EXIT_IO,
    }
}
