//! Reconstruction quality metrics and per-episode logs.
//!
//! SSIM follows the standard formulation: 11x11 Gaussian window with
//! sigma 1.5, stability constants K1 = 0.01 and K2 = 0.03, dynamic range 1.0,
//! averaged over all fully-contained windows. Inputs are clamped to `[0, 1]`
//! before comparison (the filter mean is unclamped by design; clamping
//! happens here). Images smaller than the window fall back to the largest
//! odd window that fits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::explore::Policy;
use crate::grid::GridSpec;
use crate::motion::MotionParams;
use crate::{Error, Result};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_RANGE: f64 = 1.0;

/// Mean squared difference.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "mse",
            expected: a.len().max(1),
            got: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

/// MSE over the cells selected by `mask`.
pub fn mse_masked(a: &[f64], b: &[f64], mask: &[bool]) -> Result<Option<f64>> {
    if a.len() != b.len() || a.len() != mask.len() {
        return Err(Error::DimensionMismatch {
            context: "masked mse",
            expected: a.len(),
            got: b.len().min(mask.len()),
        });
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for ((&x, &y), &m) in a.iter().zip(b).zip(mask) {
        if m {
            acc += (x - y) * (x - y);
            n += 1;
        }
    }
    Ok((n > 0).then(|| acc / n as f64))
}

/// Peak signal-to-noise ratio against a unit dynamic range, in dB.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    let e = mse(a, b)?;
    Ok(if e == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * e.log10()
    })
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let mut w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Structural similarity between two row-major maps of equal shape.
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64> {
    if a.len() != width * height || b.len() != a.len() {
        return Err(Error::DimensionMismatch {
            context: "ssim",
            expected: width * height,
            got: a.len().min(b.len()),
        });
    }
    let mut win = SSIM_WINDOW.min(width).min(height);
    if win % 2 == 0 {
        win -= 1;
    }
    if win < 1 {
        return Err(Error::InvalidConfig("empty image in ssim".into()));
    }

    let a: Vec<f64> = a.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let b: Vec<f64> = b.iter().map(|v| v.clamp(0.0, 1.0)).collect();

    let w1 = gaussian_window(win, SSIM_SIGMA);
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);

    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=(height - win) {
        for c0 in 0..=(width - win) {
            let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dr, &wr) in w1.iter().enumerate() {
                let row = (r0 + dr) * width + c0;
                for (dc, &wc) in w1.iter().enumerate() {
                    let w = wr * wc;
                    let (va, vb) = (a[row + dc], b[row + dc]);
                    ma += w * va;
                    mb += w * vb;
                    maa += w * va * va;
                    mbb += w * vb * vb;
                    mab += w * va * vb;
                }
            }
            let (var_a, var_b, cov) = (maa - ma * ma, mbb - mb * mb, mab - ma * mb);
            let val = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            total += val;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-tap record of an episode. Wall-times live in [`TapTiming`] so the
/// main log stays byte-reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TapRecord {
    pub t: usize,
    pub x_mm: f64,
    pub y_mm: f64,
    pub theta_rad: f64,
    pub ssim_patch: f64,
    pub ssim_state: f64,
    pub mse_state: f64,
    pub trace_sigma: f64,
}

/// Wall-clock timings of one tap, logged separately from the deterministic
/// record stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TapTiming {
    pub t: usize,
    pub scoring_ms: f64,
    pub update_ms: f64,
    pub total_ms: f64,
}

/// Immutable description of the episode a log belongs to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub surface_id: String,
    pub policy: Policy,
    pub seed: u64,
    pub lambda: f64,
    pub grid: GridSpec,
    pub noise_sigma: [f64; 3],
}

/// Strictly tap-ordered per-episode log.
#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub meta: EpisodeMeta,
    records: Vec<TapRecord>,
    timings: Vec<TapTiming>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow<'a> {
    t: usize,
    x_mm: f64,
    y_mm: f64,
    theta_rad: f64,
    ssim_patch: f64,
    ssim_state: f64,
    mse_state: f64,
    trace_sigma: f64,
    policy: &'a str,
    seed: u64,
    surface: &'a str,
}

/// Row shape used when reading logs back for rendering.
#[derive(Debug, Clone, Deserialize)]
pub struct ParsedCsvRow {
    pub t: usize,
    pub x_mm: f64,
    pub y_mm: f64,
    pub theta_rad: f64,
    pub ssim_patch: f64,
    pub ssim_state: f64,
    pub mse_state: f64,
    pub trace_sigma: f64,
    pub policy: String,
    pub seed: u64,
    pub surface: String,
}

impl EpisodeLog {
    pub fn new(meta: EpisodeMeta) -> Self {
        Self {
            meta,
            records: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn push(&mut self, record: TapRecord, timing: TapTiming) {
        if let Some(last) = self.records.last() {
            debug_assert!(record.t > last.t, "records must stay ordered by tap");
        }
        self.records.push(record);
        self.timings.push(timing);
    }

    pub fn records(&self) -> &[TapRecord] {
        &self.records
    }

    pub fn timings(&self) -> &[TapTiming] {
        &self.timings
    }

    pub fn motion_at(&self, t: usize) -> Option<MotionParams> {
        self.records
            .iter()
            .find(|r| r.t == t)
            .map(|r| MotionParams::new(r.x_mm, r.y_mm, r.theta_rad))
    }

    /// First tap index reaching the SSIM target on the state reconstruction.
    pub fn taps_to_ssim(&self, target: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.ssim_state >= target)
            .map(|r| r.t)
    }

    /// Write the deterministic per-tap CSV (RFC 4180, header row).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(CsvRow {
                t: r.t,
                x_mm: r.x_mm,
                y_mm: r.y_mm,
                theta_rad: r.theta_rad,
                ssim_patch: r.ssim_patch,
                ssim_state: r.ssim_state,
                mse_state: r.mse_state,
                trace_sigma: r.trace_sigma,
                policy: self.meta.policy.label(),
                seed: self.meta.seed,
                surface: &self.meta.surface_id,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Write the wall-clock timing CSV, kept out of the determinism contract.
    pub fn write_timing_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for t in &self.timings {
            w.serialize(t)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<ParsedCsvRow>> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for row in r.deserialize() {
            rows.push(row?);
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_basics_and_brute_force_agreement() {
        let a = vec![0.0; 12];
        let b = vec![1.0; 12];
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut acc = 0.0;
        for i in 0..64 {
            acc += (x[i] - y[i]) * (x[i] - y[i]);
        }
        assert!((mse(&x, &y).unwrap() - acc / 64.0).abs() < 1e-15);
        assert!(mse(&x, &y[..32].to_vec()).is_err());
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let a = vec![0.3; 9];
        assert!(psnr(&a, &a).unwrap().is_infinite());
        let b = vec![0.4; 9];
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_self_similarity_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..24 * 24).map(|_| rng.random_range(0.0..1.0)).collect();
        let s = ssim(&a, &a, 24, 24).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_images_hit_the_stability_floor() {
        // analytic value for constant images 0 and 1: C1 / (1 + C1)
        let a = vec![0.0; 16 * 16];
        let b = vec![1.0; 16 * 16];
        let s = ssim(&a, &b, 16, 16).unwrap();
        let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
        let expect = c1 / (1.0 + c1);
        assert!((s - expect).abs() < 1e-12);
        assert!(s < 0.01);
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..20 * 20).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..20 * 20).map(|_| rng.random_range(0.0..1.0)).collect();
        let s1 = ssim(&a, &b, 20, 20).unwrap();
        let s2 = ssim(&b, &a, 20, 20).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
        assert!(s1 > -1.0 && s1 < 1.0);
    }

    #[test]
    fn ssim_invariant_under_joint_flips() {
        // the Gaussian window is symmetric, so flipping both images maps the
        // window set onto itself and the score is unchanged
        let (w, h) = (18, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect();
        let flip = |img: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; img.len()];
            for r in 0..h {
                for c in 0..w {
                    out[(h - 1 - r) * w + (w - 1 - c)] = img[r * w + c];
                }
            }
            out
        };
        let s0 = ssim(&a, &b, w, h).unwrap();
        let s1 = ssim(&flip(&a), &flip(&b), w, h).unwrap();
        assert!((s0 - s1).abs() < 1e-12);
    }

    #[test]
    fn ssim_detects_structure_difference() {
        // checkerboard vs its inverse should score far below self-similarity
        let side = 22;
        let a: Vec<f64> = (0..side * side)
            .map(|i| ((i / side + i % side) % 2) as f64)
            .collect();
        let b: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        let s = ssim(&a, &b, side, side).unwrap();
        assert!(s < 0.0, "anti-correlated images should go negative: {s}");
    }

    #[test]
    fn episode_log_round_trips_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ep.csv");
        let meta = EpisodeMeta {
            surface_id: "disk, small".into(), // comma forces RFC 4180 quoting
            policy: Policy::Active,
            seed: 7,
            lambda: 0.7,
            grid: GridSpec::new(2, 4, 2.0, 4.0).unwrap(),
            noise_sigma: [0.01; 3],
        };
        let mut log = EpisodeLog::new(meta);
        for t in 1..=3 {
            log.push(
                TapRecord {
                    t,
                    x_mm: 0.5 * t as f64,
                    y_mm: -0.25,
                    theta_rad: 0.1,
                    ssim_patch: 0.5,
                    ssim_state: 0.4 + 0.1 * t as f64,
                    mse_state: 0.01,
                    trace_sigma: 10.0 / t as f64,
                },
                TapTiming {
                    t,
                    scoring_ms: 1.0,
                    update_ms: 2.0,
                    total_ms: 3.5,
                },
            );
        }
        log.write_csv(&path).unwrap();
        let rows = EpisodeLog::read_csv(&path).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].surface, "disk, small");
        assert_eq!(rows[2].t, 3);
        assert_eq!(rows[1].policy, "active");
        assert_eq!(log.taps_to_ssim(0.7), Some(3));
        assert_eq!(log.taps_to_ssim(0.9), None);
    }
}
