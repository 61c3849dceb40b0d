//! Gaussian state estimate over the flattened reconstruction region and the
//! sequential triaxial measurement update.
//!
//! The surface is static, so there is no prediction step: the posterior of
//! tap `t` is the prior of tap `t+1` unchanged. Each tap contributes three
//! linear Gaussian observations (X, Y, Z), processed one after another with
//! the posterior of each axis serving as the prior of the next.
//!
//! # Update form
//!
//! The defining update is the information form
//!
//! ```text
//! Sigma_post = [A' Q^-1 A + Sigma_prior^-1]^-1
//! ```
//!
//! which would invert an `(alpha*M)^2`-dimensional matrix per axis per tap.
//! By the matrix-inversion lemma the same posterior is
//!
//! ```text
//! S = A Sigma A' + Q          (N^2 x N^2)
//! K = Sigma A' S^-1
//! mu    += K (z - A mu)
//! Sigma -= K S K'
//! ```
//!
//! which only factorizes the `N^2 x N^2` innovation covariance. We compute
//! the covariance term as `Sigma -= Y Y'` with `Y = Sigma A' L^-T` and
//! `S = L L'`, so the downdate is symmetric rank-`N^2`. Updating entry
//! `(i, j)` and entry `(j, i)` then performs bit-identical float operations,
//! which keeps `Sigma` exactly symmetric and its diagonal (hence the trace)
//! exactly non-increasing, with no separate re-symmetrization pass. The
//! equivalence of this form with the literal information form is enforced by
//! the oracle tests in `tests/`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::GridSpec;
use crate::motion::MotionParams;
use crate::operators::{ClipMatrix, ObservationAxis, SensorModel};
use crate::{Error, Result};

/// Diagonal jitter added to the prior covariance, relative to its amplitude.
pub const PRIOR_JITTER: f64 = 1e-8;

/// Squared-exponential prior over the state grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Kernel amplitude `A` (prior variance of every cell).
    pub amplitude: f64,
    /// Kernel length scale `r` in mm.
    pub length_scale_mm: f64,
    /// Constant initial mean.
    pub mean: f64,
}

impl PriorConfig {
    /// Defaults: unit amplitude, length scale of two HR cell pitches, zero mean.
    pub fn default_for(grid: &GridSpec) -> Self {
        Self {
            amplitude: 1.0,
            length_scale_mm: 2.0 * grid.state_pitch(),
            mean: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0) || !(self.length_scale_mm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "prior amplitude {} and length scale {} must be positive",
                self.amplitude, self.length_scale_mm
            )));
        }
        Ok(())
    }
}

/// One tap's triaxial LR observation and the pose it was taken at.
#[derive(Debug, Clone)]
pub struct ObservationFrame {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub motion: MotionParams,
    pub tap_index: usize,
}

impl ObservationFrame {
    pub fn axis(&self, axis: ObservationAxis) -> &DVector<f64> {
        match axis {
            ObservationAxis::X => &self.x,
            ObservationAxis::Y => &self.y,
            ObservationAxis::Z => &self.z,
        }
    }

    pub fn validate(&self, lr_dim: usize) -> Result<()> {
        self.validate_axes(lr_dim, [true; 3])
    }

    /// Validate only the axes a filter will actually consume.
    pub fn validate_axes(&self, lr_dim: usize, enabled: [bool; 3]) -> Result<()> {
        for axis in ObservationAxis::ALL {
            if !enabled[axis.index()] {
                continue;
            }
            let v = self.axis(axis);
            if v.len() != lr_dim {
                return Err(Error::DimensionMismatch {
                    context: "observation frame",
                    expected: lr_dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "non-finite value in {}-axis observation of tap {}",
                    axis.label(),
                    self.tap_index
                )));
            }
        }
        Ok(())
    }
}

/// Gaussian belief over the flattened state: mean, covariance, tap counter.
#[derive(Debug, Clone)]
pub struct StateEstimate {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    taps: usize,
}

impl StateEstimate {
    pub fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>, taps: usize) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(Error::InvalidConfig(format!(
                "covariance must be square, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "state estimate",
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        Ok(Self { mean, cov, taps })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.cov.diagonal().sum()
    }

    /// Per-cell posterior variances (the covariance diagonal).
    pub fn variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }

    /// Largest absolute difference between the covariance and its transpose.
    pub fn symmetry_error(&self) -> f64 {
        let n = self.cov.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.cov[(i, j)] - self.cov[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>, usize) {
        (self.mean, self.cov, self.taps)
    }
}

/// Initial belief: constant mean and squared-exponential covariance
/// `Sigma_0(i, j) = A exp(-||v_i - v_j||^2 / r^2)` over the state cell
/// centers, plus `PRIOR_JITTER * A` on the diagonal.
///
/// The kernel factorizes over the grid axes, so positive definiteness is
/// checked exactly at every scale through the eigenvalues of the
/// one-dimensional kernel: the spectrum of a Kronecker product is the set of
/// eigenvalue products.
pub fn init_state(grid: &GridSpec, prior: &PriorConfig) -> Result<StateEstimate> {
    prior.validate()?;
    let side = grid.state_side();
    let n = grid.state_dim();
    let pitch = grid.state_pitch();
    let r2 = prior.length_scale_mm * prior.length_scale_mm;

    // 1-D kernel along one axis; the 2-D kernel is its Kronecker square.
    let k1 = DMatrix::from_fn(side, side, |a, b| {
        let d = (a as f64 - b as f64) * pitch;
        (-d * d / r2).exp()
    });

    let eigs = k1.clone().symmetric_eigenvalues();
    let min_prod = eigs
        .iter()
        .flat_map(|&a| eigs.iter().map(move |&b| a * b))
        .fold(f64::INFINITY, f64::min);
    // entry-rounding perturbation bound for the assembled matrix
    let slack = 4.0 * f64::EPSILON * n as f64;
    let min_eig_bound = prior.amplitude * (min_prod + PRIOR_JITTER - slack);
    if min_eig_bound <= 0.0 {
        return Err(Error::NonPositiveDefinitePrior(min_eig_bound));
    }

    let mut cov = DMatrix::zeros(n, n);
    {
        let a = prior.amplitude;
        let k1s = k1.as_slice(); // column-major side x side
        cov.as_mut_slice()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(j, col)| {
                let (rj, cj) = (j / side, j % side);
                for (i, out) in col.iter_mut().enumerate() {
                    let (ri, ci) = (i / side, i % side);
                    *out = a * k1s[cj * side + ci] * k1s[rj * side + ri];
                }
            });
    }
    let jitter = PRIOR_JITTER * prior.amplitude;
    for i in 0..n {
        cov[(i, i)] += jitter;
    }

    Ok(StateEstimate {
        mean: DVector::from_element(n, prior.mean),
        cov,
        taps: 0,
    })
}

// ---------------------------------------------------------------------------
// parallel kernels for the covariance-sized passes
// ---------------------------------------------------------------------------

const ROWS_PER_CHUNK: usize = 256;
const COLS_PER_CHUNK: usize = 64;

/// Columns of `a` (k x n, column-major) containing at least one nonzero.
fn active_columns(a: &DMatrix<f64>) -> Vec<usize> {
    let k = a.nrows();
    let s = a.as_slice();
    (0..a.ncols())
        .filter(|&j| s[j * k..(j + 1) * k].iter().any(|&v| v != 0.0))
        .collect()
}

/// `P = Sigma A'` as a row-major `n x k` buffer. Only the active columns of
/// `A` contribute; with a windowed clip matrix that skips most of the state.
fn sigma_a_transpose(cov: &DMatrix<f64>, a: &DMatrix<f64>, active: &[usize]) -> Vec<f64> {
    let n = cov.nrows();
    let k = a.nrows();
    let sig = cov.as_slice();
    let a_s = a.as_slice();
    let mut p = vec![0.0f64; n * k];
    p.par_chunks_mut(ROWS_PER_CHUNK * k)
        .enumerate()
        .for_each(|(ci, chunk)| {
            let r0 = ci * ROWS_PER_CHUNK;
            let rows = chunk.len() / k;
            for &j in active {
                let a_col = &a_s[j * k..(j + 1) * k];
                let s_col = &sig[j * n + r0..j * n + r0 + rows];
                for (r_local, &s) in s_col.iter().enumerate() {
                    let p_row = &mut chunk[r_local * k..(r_local + 1) * k];
                    for (pv, &av) in p_row.iter_mut().zip(a_col) {
                        *pv += s * av;
                    }
                }
            }
        });
    p
}

/// `S = A P + diag(q)`, symmetrized.
fn innovation_covariance(
    a: &DMatrix<f64>,
    p: &[f64],
    active: &[usize],
    q_diag: &[f64],
) -> DMatrix<f64> {
    let k = a.nrows();
    let a_s = a.as_slice();
    let mut s = DMatrix::zeros(k, k);
    for &j in active {
        let a_col = &a_s[j * k..(j + 1) * k];
        let p_row = &p[j * k..(j + 1) * k];
        for (b, &pb) in p_row.iter().enumerate() {
            let mut s_col = s.column_mut(b);
            for (r, &av) in a_col.iter().enumerate() {
                s_col[r] += av * pb;
            }
        }
    }
    s = (&s + s.transpose()) * 0.5;
    for (i, &q) in q_diag.iter().enumerate() {
        s[(i, i)] += q;
    }
    s
}

/// `Y = P L^-T` by forward substitution over columns, column-major `n x k`.
fn gain_factor(p: &[f64], n: usize, l: &DMatrix<f64>) -> Vec<f64> {
    let k = l.nrows();
    let mut y = vec![0.0f64; n * k];
    for a in 0..k {
        let (done, rest) = y.split_at_mut(a * n);
        let col = &mut rest[..n];
        for (r, c) in col.iter_mut().enumerate() {
            *c = p[r * k + a];
        }
        for b in 0..a {
            let lab = l[(a, b)];
            let yb = &done[b * n..(b + 1) * n];
            for (c, &v) in col.iter_mut().zip(yb) {
                *c -= lab * v;
            }
        }
        let inv = 1.0 / l[(a, a)];
        for c in col.iter_mut() {
            *c *= inv;
        }
    }
    y
}

// tile sizes keeping one y segment plus a block of covariance column
// segments L1-resident during the downdate
const DOWNDATE_J_BLOCK: usize = 8;
const DOWNDATE_I_BLOCK: usize = 384;

/// `Sigma -= Y Y'` with column-major `Y`, column-parallel and cache-tiled.
///
/// Entries `(i, j)` and `(j, i)` execute bit-identical float operations (the
/// per-`a` axpy order is position-independent), so symmetry is preserved
/// exactly; every diagonal step adds `-(Y[j,a])^2 <= 0`, so the trace never
/// increases.
fn rank_k_downdate(cov: &mut DMatrix<f64>, y_cm: &[f64], k: usize) {
    let n = cov.nrows();
    cov.as_mut_slice()
        .par_chunks_mut(n * COLS_PER_CHUNK)
        .enumerate()
        .for_each(|(ci, chunk)| {
            let j0 = ci * COLS_PER_CHUNK;
            let ncols = chunk.len() / n;
            let mut jb = 0;
            while jb < ncols {
                let jb_len = DOWNDATE_J_BLOCK.min(ncols - jb);
                let block = &mut chunk[jb * n..(jb + jb_len) * n];
                let mut ib = 0;
                while ib < n {
                    let ib_len = DOWNDATE_I_BLOCK.min(n - ib);
                    for a in 0..k {
                        let y_col = &y_cm[a * n..(a + 1) * n];
                        let y_seg = &y_col[ib..ib + ib_len];
                        for (jl, col) in block.chunks_mut(n).enumerate() {
                            let coef = -y_col[j0 + jb + jl];
                            let seg = &mut col[ib..ib + ib_len];
                            for (s, &v) in seg.iter_mut().zip(y_seg) {
                                *s += coef * v;
                            }
                        }
                    }
                    ib += ib_len;
                }
                jb += jb_len;
            }
        });
}

/// Condition the belief on a single axis observation `z = A s + eps`,
/// `eps ~ N(0, diag(q))`. Does not advance the tap counter.
pub fn update_axis(
    state: StateEstimate,
    obs: &DVector<f64>,
    a: &DMatrix<f64>,
    q_diag: &[f64],
) -> Result<StateEstimate> {
    let n = state.dim();
    let k = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "observation matrix columns",
            expected: n,
            got: a.ncols(),
        });
    }
    if obs.len() != k || q_diag.len() != k {
        return Err(Error::DimensionMismatch {
            context: "observation vector",
            expected: k,
            got: obs.len().max(q_diag.len()),
        });
    }

    let StateEstimate {
        mut mean,
        mut cov,
        taps,
    } = state;

    let active = active_columns(a);
    let p = sigma_a_transpose(&cov, a, &active);
    let s = innovation_covariance(a, &p, &active, q_diag);
    let chol = Cholesky::new(s).ok_or_else(|| {
        Error::SingularInnovation(format!(
            "A Sigma A' + Q is not positive definite for a {k}-dimensional observation"
        ))
    })?;

    let innovation = obs - a * &mean;
    let w = chol.solve(&innovation);
    for (r, m) in mean.iter_mut().enumerate() {
        let p_row = &p[r * k..(r + 1) * k];
        *m += p_row.iter().zip(w.iter()).map(|(&pv, &wv)| pv * wv).sum::<f64>();
    }

    let y = gain_factor(&p, n, chol.l_dirty());
    rank_k_downdate(&mut cov, &y, k);

    Ok(StateEstimate { mean, cov, taps })
}

/// Apply one tap: build the clip matrix from the frame's pose, then condition
/// on the enabled axes in X, Y, Z order. Advances the tap counter by one.
pub fn update_tap_axes(
    state: StateEstimate,
    frame: &ObservationFrame,
    sensor: &SensorModel,
    enabled: [bool; 3],
) -> Result<StateEstimate> {
    frame.validate_axes(sensor.grid.lr_dim(), enabled)?;
    let clip = sensor.clip(frame.motion)?;
    let mut state = state;
    for axis in ObservationAxis::ALL {
        if !enabled[axis.index()] {
            continue;
        }
        let a = sensor.observation_matrix(axis, &clip);
        let q = sensor.noise.q_diag(axis);
        state = update_axis(state, frame.axis(axis), &a, &q)?;
    }
    state.taps += 1;
    Ok(state)
}

/// [`update_tap_axes`] with all three axes enabled.
pub fn update_tap(
    state: StateEstimate,
    frame: &ObservationFrame,
    sensor: &SensorModel,
) -> Result<StateEstimate> {
    update_tap_axes(state, frame, sensor, [true; 3])
}

/// Predicted HR sensor patch at a pose: `C_m mu`.
pub fn predict_hr(state: &StateEstimate, clip: &ClipMatrix) -> Result<DVector<f64>> {
    clip.apply(state.mean())
}

/// Predicted HR patch and its per-taxel predictive variance
/// `diag(C Sigma C')`.
pub fn predict_hr_with_variance(
    state: &StateEstimate,
    clip: &ClipMatrix,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let mean = clip.apply(state.mean())?;
    let cov = state.cov();
    let var = DVector::from_iterator(
        clip.nrows(),
        (0..clip.nrows()).map(|i| {
            let row = clip.row(i);
            let mut acc = 0.0;
            for &(j1, w1) in row {
                for &(j2, w2) in row {
                    acc += w1 * w2 * cov[(j1, j2)];
                }
            }
            acc
        }),
    );
    Ok((mean, var))
}
