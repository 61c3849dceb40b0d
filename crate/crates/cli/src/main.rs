//! Experiment CLI: single episodes, batch suites, rendering, config checks.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure,
//! 3 partial suite failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tactile_recon::explore::Policy;
use tactile_recon::harness::{
    episode_dir_name, render_suite, run_episode, run_suite, write_episode_artifacts,
};
use tactile_recon::sim::load_surface;
use tactile_recon::{Error, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "tactile-recon",
    about = "Reconstruct dense contact-surface shapes from simulated low-resolution tactile taps",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file (or the built-in defaults).
#[derive(Args, Clone, Default)]
struct Overrides {
    /// Configuration file (TOML); defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// LR taxels per side
    #[arg(long)]
    n: Option<usize>,
    /// HR taxels per side
    #[arg(long)]
    m: Option<usize>,
    /// State-to-sensor side ratio
    #[arg(long)]
    alpha: Option<f64>,
    /// Sensor side in mm
    #[arg(long)]
    l_sensor_mm: Option<f64>,
    /// Prior kernel amplitude
    #[arg(long)]
    prior_amplitude: Option<f64>,
    /// Prior kernel length scale in mm
    #[arg(long)]
    prior_length_scale_mm: Option<f64>,
    /// Degradation bandwidths gamma_x,gamma_y,gamma_z
    #[arg(long, value_delimiter = ',', num_args = 3)]
    gamma: Option<Vec<f64>>,
    /// Clip similarity bandwidth
    #[arg(long)]
    beta_c: Option<f64>,
    /// Observation noise sigma_x,sigma_y,sigma_z
    #[arg(long, value_delimiter = ',', num_args = 3)]
    noise_sigma: Option<Vec<f64>>,
    /// Explore-to-exploit transition rate
    #[arg(long)]
    lambda: Option<f64>,
    /// Policy for single runs: active, pure_uncertainty, random
    #[arg(long)]
    policy: Option<String>,
    /// Translation step of the action grid in mm
    #[arg(long)]
    dx_mm: Option<f64>,
    /// Rotation step of the action grid in degrees
    #[arg(long)]
    dtheta_deg: Option<f64>,
    /// Tap budget per episode
    #[arg(long)]
    taps: Option<usize>,
    /// Seeds (comma separated)
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Observation axes consumed by the filter, e.g. z or x,y,z
    #[arg(long, value_delimiter = ',')]
    axes: Option<Vec<String>>,
    /// Stop an episode once the state SSIM reaches this value
    #[arg(long)]
    stop_at_ssim: Option<f64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single episode (first surface, configured policy, first seed)
    Run(Overrides),
    /// Run the full surfaces x policies x seeds suite
    Suite(Overrides),
    /// Render a suite directory into montages and curve data
    Render {
        /// Suite output directory (the `--out` of a previous suite)
        suite_dir: PathBuf,
        /// Destination; defaults to `<suite_dir>/render`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a configuration and echo the resolved TOML
    Validate(Overrides),
}

fn parse_policy(s: &str) -> Result<Policy, Error> {
    match s {
        "active" => Ok(Policy::Active),
        "pure_uncertainty" => Ok(Policy::PureUncertainty),
        "random" => Ok(Policy::Random),
        other => Err(Error::InvalidConfig(format!(
            "unknown policy '{other}', want active, pure_uncertainty or random"
        ))),
    }
}

fn build_config(ov: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &ov.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let tri = |v: &Option<Vec<f64>>| v.as_ref().map(|v| [v[0], v[1], v[2]]);
    if let Some(n) = ov.n {
        cfg.grid.n = n;
    }
    if let Some(m) = ov.m {
        cfg.grid.m = m;
    }
    if let Some(a) = ov.alpha {
        cfg.grid.alpha = a;
    }
    if let Some(l) = ov.l_sensor_mm {
        cfg.grid.l_sensor_mm = l;
    }
    if let Some(a) = ov.prior_amplitude {
        cfg.prior.amplitude = a;
    }
    if let Some(r) = ov.prior_length_scale_mm {
        cfg.prior.length_scale_mm = Some(r);
    }
    if let Some(g) = tri(&ov.gamma) {
        cfg.sensor.gamma = g;
    }
    if let Some(b) = ov.beta_c {
        cfg.sensor.beta_c = b;
    }
    if let Some(s) = tri(&ov.noise_sigma) {
        cfg.sensor.noise_sigma = s;
    }
    if let Some(l) = ov.lambda {
        cfg.explore.lambda = l;
    }
    if let Some(p) = &ov.policy {
        cfg.explore.policy = parse_policy(p)?;
    }
    if let Some(d) = ov.dx_mm {
        cfg.explore.dx_mm = d;
    }
    if let Some(d) = ov.dtheta_deg {
        cfg.explore.dtheta_deg = d;
    }
    if let Some(t) = ov.taps {
        cfg.episode.taps = t;
    }
    if let Some(s) = &ov.seeds {
        cfg.episode.seeds = s.clone();
    }
    if let Some(a) = &ov.axes {
        cfg.episode.axes = a.clone();
    }
    if let Some(s) = ov.stop_at_ssim {
        cfg.episode.stop_at_ssim = Some(s);
    }
    if let Some(o) = &ov.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn cmd_run(ov: &Overrides) -> Result<(), (u8, String)> {
    let cfg = build_config(ov).map_err(|e| (1u8, e.to_string()))?;
    cfg.validate().map_err(|e| (1u8, e.to_string()))?;
    let grid = cfg.grid_spec().map_err(|e| (1u8, e.to_string()))?;
    let surface_spec = &cfg.surfaces[0];
    let surface = load_surface(surface_spec, &grid, Some(format!("s00_{}", surface_spec.default_id())))
        .map_err(|e| (2u8, e.to_string()))?;
    let policy = cfg.explore.policy;
    let seed = cfg.episode.seeds[0];

    let out = run_episode(&cfg, &surface, policy, seed).map_err(|e| (2u8, e.to_string()))?;
    let dir = cfg
        .output
        .dir
        .join("episodes")
        .join(episode_dir_name(&surface.id, policy, seed));
    write_episode_artifacts(&dir, &out).map_err(|e| (2u8, e.to_string()))?;

    let last = out.log.records().last();
    println!(
        "episode {}: {} taps, final ssim_state {:.4}, mse {:.6}",
        dir.display(),
        out.log.records().len(),
        last.map_or(f64::NAN, |r| r.ssim_state),
        last.map_or(f64::NAN, |r| r.mse_state),
    );
    Ok(())
}

fn cmd_suite(ov: &Overrides) -> Result<(), (u8, String)> {
    let cfg = build_config(ov).map_err(|e| (1, e.to_string()))?;
    cfg.validate().map_err(|e| (1, e.to_string()))?;
    let outcome = run_suite(&cfg).map_err(|e| (2, e.to_string()))?;
    println!(
        "suite complete: {} episodes ok, {} failed, artifacts in {}",
        outcome.episodes.len(),
        outcome.failures.len(),
        outcome.out_dir.display()
    );
    for f in &outcome.failures {
        eprintln!("failed: {f}");
    }
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err((3, "some episodes failed".into()))
    }
}

fn cmd_render(suite_dir: &PathBuf, out: &Option<PathBuf>) -> Result<(), (u8, String)> {
    let render_dir = out.clone().unwrap_or_else(|| suite_dir.join("render"));
    let n = render_suite(suite_dir, &render_dir).map_err(|e| (2, e.to_string()))?;
    println!("rendered {n} episodes into {}", render_dir.display());
    Ok(())
}

fn cmd_validate(ov: &Overrides) -> Result<(), (u8, String)> {
    let cfg = build_config(ov).map_err(|e| (1, e.to_string()))?;
    cfg.validate().map_err(|e| (1, e.to_string()))?;
    let text = cfg.to_toml_string().map_err(|e| (1, e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(ov) => cmd_run(ov),
        Command::Suite(ov) => cmd_suite(ov),
        Command::Render { suite_dir, out } => cmd_render(suite_dir, out),
        Command::Validate(ov) => cmd_validate(ov),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
