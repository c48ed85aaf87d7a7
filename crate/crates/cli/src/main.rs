//! Workflow driver: synth, fit, explain-global, explain-local,
//! consistency, and render subcommands, all driven by one run-config
//! file with flag overrides.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Ctx;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "shapca", version, about = "Sparse-PCA Shapley explanation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run-config file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Overwrite existing artifacts.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic spectra dataset with ground-truth latents.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        n_blocks: Option<usize>,
        #[arg(long)]
        block_width: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Split, preprocess, fit sparse PCA and the classifier, report metrics.
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Back-project class-level attributions and render figures.
    ExplainGlobal {
        #[command(flatten)]
        common: Common,
    },
    /// Back-project single-sample attributions and render figures.
    ExplainLocal {
        #[command(flatten)]
        common: Common,
        /// Explain these test-sample indices (overrides the config list).
        #[arg(long)]
        sample: Vec<usize>,
    },
    /// Cross-fold explanation consistency protocol.
    Consistency {
        #[command(flatten)]
        common: Common,
    },
    /// Re-render SVG figures from explanation documents.
    Render {
        #[command(flatten)]
        common: Common,
    },
}

fn build_ctx(common: &Common) -> Result<Ctx, String> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    if let Some(w) = common.workers {
        config.workers = w;
    }
    if config.workers > 0 {
        // Ignore the error if a pool already exists (tests, repeat calls).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build_global();
    }
    Ok(Ctx {
        config,
        force: common.force,
    })
}

fn run() -> Result<(), (String, String)> {
    let cli = Cli::parse();
    let stage_err = |stage: &str| {
        let stage = stage.to_string();
        move |e: String| (stage.clone(), e)
    };
    match cli.command {
        Command::Synth {
            common,
            n_samples,
            n_blocks,
            block_width,
            noise,
        } => {
            let mut ctx = build_ctx(&common).map_err(stage_err("synth"))?;
            if let Some(v) = n_samples {
                ctx.config.synth.n_samples = v;
            }
            if let Some(v) = n_blocks {
                ctx.config.synth.n_blocks = v;
            }
            if let Some(v) = block_width {
                ctx.config.synth.block_width = v;
            }
            if let Some(v) = noise {
                ctx.config.synth.noise = v;
            }
            commands::run_synth(&ctx).map_err(stage_err("synth"))
        }
        Command::Fit { common } => {
            let ctx = build_ctx(&common).map_err(stage_err("fit"))?;
            commands::run_fit(&ctx).map_err(stage_err("fit"))
        }
        Command::ExplainGlobal { common } => {
            let ctx = build_ctx(&common).map_err(stage_err("explain-global"))?;
            commands::run_explain_global(&ctx).map_err(stage_err("explain-global"))
        }
        Command::ExplainLocal { common, sample } => {
            let mut ctx = build_ctx(&common).map_err(stage_err("explain-local"))?;
            if !sample.is_empty() {
                ctx.config.explain.sample_indices = sample;
            }
            commands::run_explain_local(&ctx).map_err(stage_err("explain-local"))
        }
        Command::Consistency { common } => {
            let ctx = build_ctx(&common).map_err(stage_err("consistency"))?;
            commands::run_consistency(&ctx).map_err(stage_err("consistency"))
        }
        Command::Render { common } => {
            let ctx = build_ctx(&common).map_err(stage_err("render"))?;
            commands::run_render(&ctx).map_err(stage_err("render"))
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err((stage, message)) => {
            eprintln!("error[{stage}]: {message}");
            ExitCode::FAILURE
        }
    }
}
