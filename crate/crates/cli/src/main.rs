//! Reproducible, config-driven runner for the nvnmr toolkit.
//!
//! Every command reads one TOML config, takes a few overriding flags, and
//! writes all of its outputs under one directory together with the
//! resolved config, a `manifest.json` of content hashes, and a `run.log`
//! (the only file carrying timestamps). Given the same config and seed, a
//! rerun reproduces every output byte for byte.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

mod config;
mod fit;
mod image;
mod output;
mod simulate;
mod verify_cmd;

use config::RunConfig;
use output::Outputs;

#[derive(Parser)]
#[command(name = "nvnmr", version, about = "NV nanoscale-NMR signal modeling and analysis")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Random seed; overrides `seed` in the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads for parallel fitting (0 = all cores); overrides the
    /// config.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward-model contrast spectra for a configured sample stack.
    Simulate,
    /// Run a fit workflow on spectrum files and write a JSON report.
    Fit {
        /// Workflow override: generic | calibrate-depth | thickness |
        /// gyromagnetic | t2star-bound | model-selection.
        #[arg(long)]
        workflow: Option<String>,
    },
    /// Wide-field pipeline: frames to per-pixel spectra to fitted maps.
    Image,
    /// Cross-check the closed forms against quadrature and Monte Carlo.
    Verify {
        /// Shrink the Monte Carlo sizes for a fast smoke run.
        #[arg(long)]
        quick: bool,
        /// Negative control: corrupt the reference prefactor; the suite
        /// must then fail.
        #[arg(long)]
        corrupt_prefactor: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit { .. } => "fit",
            Command::Image => "image",
            Command::Verify { .. } => "verify",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let config_dir = cli
        .config
        .as_deref()
        .and_then(Path::parent)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();

    // Flag overrides, folded into the config so the emitted resolved
    // config describes the run that actually happened.
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(threads) = cli.threads {
        cfg.threads = Some(threads);
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    match &cli.command {
        Command::Fit { workflow: Some(w) } => {
            let fit = cfg
                .fit
                .as_mut()
                .ok_or_else(|| anyhow!("--workflow given but the config has no [fit] section"))?;
            fit.workflow = w.clone();
        }
        Command::Verify { quick, corrupt_prefactor } => {
            let mut v = cfg.verify.take().unwrap_or_default();
            v.quick |= quick;
            v.corrupt_prefactor |= corrupt_prefactor;
            cfg.verify = Some(v);
        }
        _ => {}
    }
    let seed = *cfg.seed.get_or_insert(7);
    let threads = *cfg.threads.get_or_insert(0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }

    let out = cfg
        .out
        .clone()
        .ok_or_else(|| anyhow!("no output directory: set `out` in the config or pass --out"))?;
    let mut outputs = Outputs::new(out)?;
    let resolved = toml::to_string_pretty(&cfg).context("serializing resolved config")?;
    outputs.write("config_resolved.toml", resolved.as_bytes())?;

    let name = cli.command.name();
    let result = match &cli.command {
        Command::Simulate => simulate::run(&cfg, &mut outputs),
        Command::Fit { .. } => fit::run(&cfg, &mut outputs, &config_dir),
        Command::Image => image::run(&cfg, &mut outputs, &config_dir, seed),
        Command::Verify { .. } => verify_cmd::run(&cfg, &mut outputs, seed),
    };
    match result {
        Ok(()) => {
            outputs.write_manifest(name)?;
            outputs.log_run(name, "ok");
            Ok(())
        }
        Err(e) => {
            outputs.log_run(name, "error");
            Err(e)
        }
    }
}
