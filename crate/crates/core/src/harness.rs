//! Experiment orchestration: seeded episodes, batch suites, artifact output.
//!
//! An episode is the tap -> observe -> update -> select loop against one
//! hidden surface. The first tap of every episode is at the origin pose (the
//! first tap defines the reconstruction frame); subsequent poses come from
//! the configured policy. A suite crosses surfaces x policies x seeds,
//! writing one artifact directory per episode plus summary tables.
//!
//! Determinism: for a fixed `(config, seed)` an episode produces identical
//! logs and images on every run. Wall-clock timings are therefore segregated
//! into `*_timing.csv` files, which are exempt from that contract.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::explore::{select_action_excluding, DecisionMaps, Policy};
use crate::filter::{init_state, predict_hr, update_tap_axes, PriorConfig, StateEstimate};
use crate::grid::GridSpec;
use crate::imageio::{hstack, write_pgm, write_png_gray, GrayImage8};
use crate::metrics::{mse, ssim, EpisodeLog, EpisodeMeta, TapRecord, TapTiming};
use crate::motion::{ActionSpace, MotionParams};
use crate::operators::SensorModel;
use crate::sim::{execute_tap, load_surface, GroundTruthSurface, TapCommand};
use crate::{Error, Result};

/// Everything pose-independent an episode needs, shareable across a suite.
pub struct EpisodeContext {
    pub grid: GridSpec,
    pub filter_sensor: SensorModel,
    pub sim_sensor: SensorModel,
    pub actions: ActionSpace,
    pub prior: PriorConfig,
}

impl EpisodeContext {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let grid = cfg.grid_spec()?;
        Ok(Self {
            grid,
            filter_sensor: cfg.filter_sensor(grid)?,
            sim_sensor: cfg.sim_sensor(grid)?,
            actions: cfg.action_space(&grid)?,
            prior: cfg.prior_config(&grid),
        })
    }
}

/// An episode's full in-memory result.
pub struct EpisodeOutput {
    pub log: EpisodeLog,
    pub truth: Vec<f64>,
    pub final_mean: Vec<f64>,
    /// `(tap count, clamped mean)` at the configured snapshot taps.
    pub snapshots: Vec<(usize, Vec<f64>)>,
    /// `(tap count, decision map)` at the configured snapshot taps.
    pub decision_snapshots: Vec<(usize, Vec<f64>)>,
    pub final_state: StateEstimate,
}

fn clamped(mean: &nalgebra::DVector<f64>) -> Vec<f64> {
    mean.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// Run one episode of up to `cfg.episode.taps` taps.
pub fn run_episode(
    cfg: &ExperimentConfig,
    surface: &GroundTruthSurface,
    policy: Policy,
    seed: u64,
) -> Result<EpisodeOutput> {
    let ctx = EpisodeContext::build(cfg)?;
    run_episode_with(&ctx, cfg, surface, policy, seed)
}

/// [`run_episode`] against a prebuilt context.
pub fn run_episode_with(
    ctx: &EpisodeContext,
    cfg: &ExperimentConfig,
    surface: &GroundTruthSurface,
    policy: Policy,
    seed: u64,
) -> Result<EpisodeOutput> {
    let grid = &ctx.grid;
    let side = grid.state_side();
    let axes = cfg.axes_mask()?;
    let lambda = cfg.explore.lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = init_state(grid, &ctx.prior)?;
    let truth: Vec<f64> = surface.values().iter().cloned().collect();

    let mut log = EpisodeLog::new(EpisodeMeta {
        surface_id: surface.id.clone(),
        policy,
        seed,
        lambda,
        grid: *grid,
        noise_sigma: ctx.sim_sensor.noise.sigma,
    });
    let mut snapshots = Vec::new();
    let mut decision_snapshots = Vec::new();
    let mut executed: Vec<usize> = Vec::new();

    let at_tap = |err: Error, t: usize| Error::EpisodeAborted {
        tap: t,
        source: Box::new(err),
    };

    for t in 1..=cfg.episode.taps {
        let tap_start = Instant::now();

        // The origin pose anchors the first tap; afterwards the policy picks
        // among the poses not yet executed.
        let motion = if t == 1 {
            MotionParams::identity()
        } else {
            let maps =
                DecisionMaps::compute(&state, lambda, grid).map_err(|e| at_tap(e, t))?;
            select_action_excluding(&maps, &ctx.actions, grid, policy, &mut rng, &executed)
                .map_err(|e| at_tap(e, t))?
        };
        if let Some(idx) = ctx.actions.index_of(&motion) {
            executed.push(idx);
        }
        let scoring_ms = tap_start.elapsed().as_secs_f64() * 1e3;

        let cmd = TapCommand {
            motion,
            noise: true,
            tap_index: t - 1,
        };
        let frame =
            execute_tap(surface, cmd, &ctx.sim_sensor, &mut rng).map_err(|e| at_tap(e, t))?;

        let update_start = Instant::now();
        state = update_tap_axes(state, &frame, &ctx.filter_sensor, axes)
            .map_err(|e| at_tap(e, t))?;
        let update_ms = update_start.elapsed().as_secs_f64() * 1e3;

        let mean_img = clamped(state.mean());
        let ssim_state = ssim(&mean_img, &truth, side, side).map_err(|e| at_tap(e, t))?;
        let mse_state = mse(&mean_img, &truth).map_err(|e| at_tap(e, t))?;

        // predicted HR patch at the executed pose vs. what the ideal HR
        // sensor would have seen there
        let clip = ctx.filter_sensor.clip(motion).map_err(|e| at_tap(e, t))?;
        let pred = predict_hr(&state, &clip).map_err(|e| at_tap(e, t))?;
        let true_clip = ctx.sim_sensor.clip(motion).map_err(|e| at_tap(e, t))?;
        let true_patch = true_clip
            .apply(surface.values())
            .map_err(|e| at_tap(e, t))?;
        let ssim_patch = ssim(
            &clamped(&pred),
            &clamped(&true_patch),
            grid.m,
            grid.m,
        )
        .map_err(|e| at_tap(e, t))?;

        log.push(
            TapRecord {
                t,
                x_mm: motion.x_mm,
                y_mm: motion.y_mm,
                theta_rad: motion.theta_rad,
                ssim_patch,
                ssim_state,
                mse_state,
                trace_sigma: state.trace(),
            },
            TapTiming {
                t,
                scoring_ms,
                update_ms,
                total_ms: tap_start.elapsed().as_secs_f64() * 1e3,
            },
        );

        if cfg.output.snapshot_taps.contains(&t) {
            snapshots.push((t, mean_img.clone()));
            let maps = DecisionMaps::compute(&state, lambda, grid).map_err(|e| at_tap(e, t))?;
            decision_snapshots.push((t, maps.decision.iter().cloned().collect()));
        }

        if let Some(stop) = cfg.episode.stop_at_ssim {
            if ssim_state >= stop {
                break;
            }
        }
    }

    Ok(EpisodeOutput {
        truth,
        final_mean: clamped(state.mean()),
        snapshots,
        decision_snapshots,
        log,
        final_state: state,
    })
}

/// Directory name of one episode's artifacts.
pub fn episode_dir_name(surface_id: &str, policy: Policy, seed: u64) -> String {
    format!("{}__{}__s{}", surface_id, policy.label(), seed)
}

fn min_max_normalized(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Write one episode's artifact directory: per-tap CSV, timing CSV, and
/// truth / reconstruction / decision-map images.
pub fn write_episode_artifacts(dir: &Path, out: &EpisodeOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let side = out.log.meta.grid.state_side();
    out.log.write_csv(&dir.join("episode.csv"))?;
    out.log.write_timing_csv(&dir.join("episode_timing.csv"))?;
    write_pgm(
        &dir.join("truth.pgm"),
        &GrayImage8::from_values(&out.truth, side, side)?,
    )?;
    write_pgm(
        &dir.join("final.pgm"),
        &GrayImage8::from_values(&out.final_mean, side, side)?,
    )?;
    for (t, mean) in &out.snapshots {
        write_pgm(
            &dir.join(format!("recon_t{t:03}.pgm")),
            &GrayImage8::from_values(mean, side, side)?,
        )?;
    }
    for (t, decision) in &out.decision_snapshots {
        // decision values are unbounded; normalize per snapshot for display
        write_pgm(
            &dir.join(format!("decision_t{t:03}.pgm")),
            &GrayImage8::from_values(&min_max_normalized(decision), side, side)?,
        )?;
    }
    Ok(())
}

/// One row of the per-episode summary table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpisodeSummaryRow {
    pub surface: String,
    pub policy: String,
    pub seed: u64,
    pub taps_run: usize,
    pub final_ssim_state: f64,
    pub final_ssim_patch: f64,
    pub final_mse: f64,
    pub taps_to_target: Option<usize>,
}

/// Suite result: per-episode rows plus the episodes that failed.
pub struct SuiteOutcome {
    pub episodes: Vec<EpisodeSummaryRow>,
    pub failures: Vec<String>,
    pub out_dir: PathBuf,
}

/// Run the full cross product `{surfaces} x {policies} x {seeds}`, writing
/// artifacts under `cfg.output.dir`. Failed episodes are logged and skipped;
/// the suite keeps going.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<SuiteOutcome> {
    cfg.validate()?;
    let ctx = EpisodeContext::build(cfg)?;
    let out_dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml_string()?)?;

    let mut surfaces = Vec::new();
    for (i, spec) in cfg.surfaces.iter().enumerate() {
        let id = format!("s{:02}_{}", i, spec.default_id());
        surfaces.push(load_surface(spec, &ctx.grid, Some(id))?);
    }

    let mut episodes = Vec::new();
    let mut failures = Vec::new();
    for surface in &surfaces {
        for &policy in &cfg.explore.policies {
            for &seed in &cfg.episode.seeds {
                let name = episode_dir_name(&surface.id, policy, seed);
                match run_episode_with(&ctx, cfg, surface, policy, seed) {
                    Ok(out) => {
                        let dir = out_dir.join("episodes").join(&name);
                        write_episode_artifacts(&dir, &out)?;
                        let last = out.log.records().last();
                        episodes.push(EpisodeSummaryRow {
                            surface: surface.id.clone(),
                            policy: policy.label().into(),
                            seed,
                            taps_run: out.log.records().len(),
                            final_ssim_state: last.map_or(f64::NAN, |r| r.ssim_state),
                            final_ssim_patch: last.map_or(f64::NAN, |r| r.ssim_patch),
                            final_mse: last.map_or(f64::NAN, |r| r.mse_state),
                            taps_to_target: out.log.taps_to_ssim(cfg.episode.target_ssim),
                        });
                    }
                    Err(e) => failures.push(format!("{name}: {e}")),
                }
            }
        }
    }

    write_summaries(&out_dir, &episodes, cfg)?;
    Ok(SuiteOutcome {
        episodes,
        failures,
        out_dir,
    })
}

fn write_summaries(
    out_dir: &Path,
    episodes: &[EpisodeSummaryRow],
    cfg: &ExperimentConfig,
) -> Result<()> {
    let mut w = csv::Writer::from_path(out_dir.join("episodes_summary.csv"))?;
    for row in episodes {
        w.serialize(row)?;
    }
    w.flush()?;

    // aggregate mean +- std per (surface, policy), seeds censored at T+1
    // when the target was never reached
    let censor = (cfg.episode.taps + 1) as f64;
    let mut groups: Vec<(String, String)> = episodes
        .iter()
        .map(|e| (e.surface.clone(), e.policy.clone()))
        .collect();
    groups.dedup();

    #[derive(serde::Serialize)]
    struct SummaryRow {
        surface: String,
        policy: String,
        n_seeds: usize,
        mean_final_ssim: f64,
        std_final_ssim: f64,
        mean_taps_to_target: f64,
        std_taps_to_target: f64,
        n_reached_target: usize,
    }

    let stats = |vals: &[f64]| -> (f64, f64) {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };

    let mut w = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    for (surface, policy) in groups {
        let rows: Vec<&EpisodeSummaryRow> = episodes
            .iter()
            .filter(|e| e.surface == surface && e.policy == policy)
            .collect();
        let ssims: Vec<f64> = rows.iter().map(|r| r.final_ssim_state).collect();
        let taps: Vec<f64> = rows
            .iter()
            .map(|r| r.taps_to_target.map_or(censor, |t| t as f64))
            .collect();
        let (mean_ssim, std_ssim) = stats(&ssims);
        let (mean_taps, std_taps) = stats(&taps);
        w.serialize(SummaryRow {
            surface,
            policy,
            n_seeds: rows.len(),
            mean_final_ssim: mean_ssim,
            std_final_ssim: std_ssim,
            mean_taps_to_target: mean_taps,
            std_taps_to_target: std_taps,
            n_reached_target: rows.iter().filter(|r| r.taps_to_target.is_some()).count(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Render a suite directory: a montage PNG per episode (truth, snapshots,
/// final reconstruction, decision maps) and a `curves.csv` with the
/// mean +- std SSIM trajectory per (surface, policy).
pub fn render_suite(suite_dir: &Path, render_dir: &Path) -> Result<usize> {
    let episodes_dir = suite_dir.join("episodes");
    if !episodes_dir.is_dir() {
        return Err(Error::InvalidConfig(format!(
            "{} has no episodes/ directory",
            suite_dir.display()
        )));
    }
    std::fs::create_dir_all(render_dir)?;

    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&episodes_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut all_rows = Vec::new();
    let mut rendered = 0usize;
    for dir in &dirs {
        let csv_path = dir.join("episode.csv");
        if !csv_path.exists() {
            continue;
        }
        all_rows.extend(EpisodeLog::read_csv(&csv_path)?);

        let mut panels: Vec<GrayImage8> = Vec::new();
        for name in ["truth.pgm", "final.pgm"] {
            let p = dir.join(name);
            if p.exists() {
                panels.push(crate::imageio::read_pgm(&p)?);
            }
        }
        let mut snaps: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| {
                        (n.starts_with("recon_t") || n.starts_with("decision_t"))
                            && n.ends_with(".pgm")
                    })
            })
            .collect();
        snaps.sort();
        for p in snaps {
            panels.push(crate::imageio::read_pgm(&p)?);
        }
        if panels.is_empty() {
            continue;
        }
        let refs: Vec<&GrayImage8> = panels.iter().collect();
        let montage = hstack(&refs, 2)?;
        let name = dir.file_name().unwrap().to_string_lossy();
        write_png_gray(&render_dir.join(format!("{name}.png")), &montage)?;
        rendered += 1;
    }

    // mean/std curves per (surface, policy, t)
    #[derive(serde::Serialize)]
    struct CurveRow {
        surface: String,
        policy: String,
        t: usize,
        n: usize,
        mean_ssim_state: f64,
        std_ssim_state: f64,
        mean_mse_state: f64,
        mean_trace_sigma: f64,
    }
    let mut keys: Vec<(String, String, usize)> = all_rows
        .iter()
        .map(|r| (r.surface.clone(), r.policy.clone(), r.t))
        .collect();
    keys.sort();
    keys.dedup();
    let mut w = csv::Writer::from_path(render_dir.join("curves.csv"))?;
    for (surface, policy, t) in keys {
        let vals: Vec<_> = all_rows
            .iter()
            .filter(|r| r.surface == surface && r.policy == policy && r.t == t)
            .collect();
        let n = vals.len();
        let mean = |f: &dyn Fn(&crate::metrics::ParsedCsvRow) -> f64| -> f64 {
            vals.iter().map(|r| f(r)).sum::<f64>() / n as f64
        };
        let mean_ssim = mean(&|r| r.ssim_state);
        let var =
            vals.iter().map(|r| (r.ssim_state - mean_ssim).powi(2)).sum::<f64>() / n as f64;
        w.serialize(CurveRow {
            surface,
            policy,
            t,
            n,
            mean_ssim_state: mean_ssim,
            std_ssim_state: var.sqrt(),
            mean_mse_state: mean(&|r| r.mse_state),
            mean_trace_sigma: mean(&|r| r.trace_sigma),
        })?;
    }
    w.flush()?;
    Ok(rendered)
}
