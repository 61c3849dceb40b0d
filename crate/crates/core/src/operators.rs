//! Linear operators of the observation pipeline.
//!
//! A tap at pose `m` observes the state through three stacked linear maps:
//! the clip matrix `C_m` extracts the HR sensor window from the state grid,
//! the gradient operators `G_x`/`G_y` turn the Z channel into tangential
//! X/Y channels, and the degradation matrix `H(gamma)` blurs HR taxels down
//! to the LR taxels the physical sensor reports, plus diagonal Gaussian noise.
//!
//! All builders are pure: equal inputs produce bit-identical operators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::grid::{Frame, GridSpec};
use crate::motion::MotionParams;
use crate::{Error, Result};

/// `exp(-x)` underflows to exactly 0.0 beyond this, so Gaussian weights
/// outside a window of squared radius `745 * beta` contribute nothing.
const EXP_UNDERFLOW: f64 = 745.0;

/// Observation channel of the triaxial sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservationAxis {
    X,
    Y,
    Z,
}

impl ObservationAxis {
    pub const ALL: [ObservationAxis; 3] = [Self::X, Self::Y, Self::Z];

    pub fn index(self) -> usize {
        match self {
            Self::X => 0,
            Self::Y => 1,
            Self::Z => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::X => "x",
            Self::Y => "y",
            Self::Z => "z",
        }
    }
}

/// Row-sparse clip matrix `C_m` of shape `M^2 x (alpha*M)^2`.
///
/// Row `i` holds normalized Gaussian similarities between the transformed HR
/// sensor cell center `u_i = R v_i + (x, y)` and the state cell centers; rows
/// sum to 1. With the default bandwidth `beta_c = 1e-3` each row is sharply
/// concentrated on the state cell nearest to `u_i`.
#[derive(Debug, Clone)]
pub struct ClipMatrix {
    /// Per HR cell: `(state column index, weight)` pairs, column-ascending.
    rows: Vec<Vec<(usize, f64)>>,
    state_dim: usize,
    pub motion: MotionParams,
    pub beta_c: f64,
    /// Rows whose Gaussian weights all underflowed and fell back to exact
    /// nearest-neighbor assignment.
    pub degenerate_rows: usize,
}

impl ClipMatrix {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.state_dim
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `C * v` for a flattened state vector.
    pub fn apply(&self, state: &DVector<f64>) -> Result<DVector<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "clip apply",
                expected: self.state_dim,
                got: state.len(),
            });
        }
        let out = self
            .rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * state[j]).sum())
            .collect::<Vec<f64>>();
        Ok(DVector::from_vec(out))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.state_dim);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[(i, j)] = w;
            }
        }
        m
    }
}

/// Build the clip matrix for pose `m` with similarity bandwidth `beta_c`.
///
/// Weights are evaluated only inside the window where `exp` does not
/// underflow; a row whose weights all underflow falls back to weight 1 on the
/// nearest state cell and is counted in `degenerate_rows`.
pub fn build_clip_matrix(grid: &GridSpec, m: MotionParams, beta_c: f64) -> Result<ClipMatrix> {
    if !(beta_c > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "clip bandwidth beta_c={beta_c} must be positive"
        )));
    }
    let side = grid.state_side();
    let half_l = grid.l_state_mm() / 2.0;
    let pitch = grid.state_pitch();
    let radius = (EXP_UNDERFLOW * beta_c).sqrt();

    let mut rows = Vec::with_capacity(grid.hr_dim());
    let mut degenerate = 0usize;
    for v in grid.cell_centers(Frame::HrSensor) {
        let u = m.to_state_frame(v);
        let clamp_idx = |v: f64| -> usize { (v.max(0.0)).min((side - 1) as f64) as usize };
        let c_lo = clamp_idx(((u.x - radius + half_l) / pitch - 0.5).floor());
        let c_hi = clamp_idx(((u.x + radius + half_l) / pitch - 0.5).ceil());
        let r_lo = clamp_idx(((half_l - (u.y + radius)) / pitch - 0.5).floor());
        let r_hi = clamp_idx(((half_l - (u.y - radius)) / pitch - 0.5).ceil());

        let mut entries = Vec::new();
        let mut sum = 0.0;
        for r in r_lo..=r_hi {
            let cy = half_l - (r as f64 + 0.5) * pitch;
            for c in c_lo..=c_hi {
                let cx = -half_l + (c as f64 + 0.5) * pitch;
                let d2 = (cx - u.x).powi(2) + (cy - u.y).powi(2);
                let w = (-d2 / beta_c).exp();
                if w > 0.0 {
                    entries.push((r * side + c, w));
                    sum += w;
                }
            }
        }
        if sum > 0.0 {
            for e in &mut entries {
                e.1 /= sum;
            }
        } else {
            let (r, c) = grid.nearest_cell(Frame::State, u.x, u.y);
            entries = vec![(r * side + c, 1.0)];
            degenerate += 1;
        }
        rows.push(entries);
    }

    Ok(ClipMatrix {
        rows,
        state_dim: grid.state_dim(),
        motion: m,
        beta_c,
        degenerate_rows: degenerate,
    })
}

/// Gaussian degradation matrix `H(gamma)` of shape `N^2 x M^2`.
///
/// Entry `(i, j)` weighs the HR taxel `j` into the LR taxel `i` by
/// `exp(-||v_hr_j - v_lr_i||^2 / gamma)`, normalized so each row's maximum
/// entry is exactly 1.
#[derive(Debug, Clone)]
pub struct DegradationMatrix {
    pub matrix: DMatrix<f64>,
    pub gamma: f64,
}

pub fn build_degradation_matrix(grid: &GridSpec, gamma: f64) -> Result<DegradationMatrix> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "degradation parameter gamma={gamma} must be positive"
        )));
    }
    let lr = grid.cell_centers(Frame::LrSensor);
    let hr = grid.cell_centers(Frame::HrSensor);
    let mut h = DMatrix::zeros(lr.len(), hr.len());
    for (i, li) in lr.iter().enumerate() {
        let mut row_max = 0.0f64;
        for (j, hj) in hr.iter().enumerate() {
            let d2 = (hj.x - li.x).powi(2) + (hj.y - li.y).powi(2);
            let w = (-d2 / gamma).exp();
            h[(i, j)] = w;
            row_max = row_max.max(w);
        }
        for j in 0..hr.len() {
            h[(i, j)] /= row_max;
        }
    }
    Ok(DegradationMatrix { matrix: h, gamma })
}

/// 3x3 Sobel kernel for the given axis under this crate's conventions:
/// X rightward (ascending column), Y upward (descending row). Raw weights,
/// scaled by `gain`; indexed `[dr + 1][dc + 1]`.
pub fn sobel_kernel(axis: ObservationAxis, gain: f64) -> [[f64; 3]; 3] {
    let g = gain;
    match axis {
        ObservationAxis::X => [
            [-g, 0.0, g],
            [-2.0 * g, 0.0, 2.0 * g],
            [-g, 0.0, g],
        ],
        ObservationAxis::Y => [
            [g, 2.0 * g, g],
            [0.0, 0.0, 0.0],
            [-g, -2.0 * g, -g],
        ],
        ObservationAxis::Z => panic!("no gradient kernel for the Z axis"),
    }
}

/// Apply a Sobel gradient to a flattened row-major square image with
/// replicate border padding.
pub fn sobel_filter(img: &[f64], side: usize, axis: ObservationAxis, gain: f64) -> Vec<f64> {
    assert_eq!(img.len(), side * side);
    let k = sobel_kernel(axis, gain);
    let clamp = |v: isize| -> usize { v.clamp(0, side as isize - 1) as usize };
    let mut out = vec![0.0; img.len()];
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            for (dr, krow) in k.iter().enumerate() {
                let rr = clamp(r as isize + dr as isize - 1);
                for (dc, &kw) in krow.iter().enumerate() {
                    if kw != 0.0 {
                        let cc = clamp(c as isize + dc as isize - 1);
                        acc += kw * img[rr * side + cc];
                    }
                }
            }
            out[r * side + c] = acc;
        }
    }
    out
}

/// Sobel operators in matrix form over the flattened `M^2` HR sensor grid.
#[derive(Debug, Clone)]
pub struct GradientOperators {
    pub gx: DMatrix<f64>,
    pub gy: DMatrix<f64>,
    pub gain: f64,
}

pub fn build_gradient_operators(grid: &GridSpec, gain: f64) -> Result<GradientOperators> {
    let side = grid.m;
    if side < 3 {
        return Err(Error::KernelTooSmall(side));
    }
    let build = |axis: ObservationAxis| -> DMatrix<f64> {
        let k = sobel_kernel(axis, gain);
        let dim = side * side;
        let clamp = |v: isize| -> usize { v.clamp(0, side as isize - 1) as usize };
        let mut g = DMatrix::zeros(dim, dim);
        for r in 0..side {
            for c in 0..side {
                let out_idx = r * side + c;
                for (dr, krow) in k.iter().enumerate() {
                    let rr = clamp(r as isize + dr as isize - 1);
                    for (dc, &kw) in krow.iter().enumerate() {
                        if kw != 0.0 {
                            let cc = clamp(c as isize + dc as isize - 1);
                            g[(out_idx, rr * side + cc)] += kw;
                        }
                    }
                }
            }
        }
        g
    };
    Ok(GradientOperators {
        gx: build(ObservationAxis::X),
        gy: build(ObservationAxis::Y),
        gain,
    })
}

/// Per-axis diagonal observation noise over the `N^2` LR taxels.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub sigma: [f64; 3],
    lr_dim: usize,
}

impl NoiseModel {
    pub fn new(sigma: [f64; 3], lr_dim: usize) -> Result<Self> {
        if sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "noise sigma must be non-negative, got {sigma:?}"
            )));
        }
        Ok(Self { sigma, lr_dim })
    }

    pub fn sigma(&self, axis: ObservationAxis) -> f64 {
        self.sigma[axis.index()]
    }

    pub fn variance(&self, axis: ObservationAxis) -> f64 {
        let s = self.sigma(axis);
        s * s
    }

    /// Diagonal of `Q_axis`, length `N^2`.
    pub fn q_diag(&self, axis: ObservationAxis) -> Vec<f64> {
        vec![self.variance(axis); self.lr_dim]
    }
}

/// The precomputed, pose-independent part of the sensor: degradation
/// matrices per axis, gradient operators, the composed `H(gamma) * G_axis`
/// factors, and the noise model. One instance is shared by the simulator and
/// the filter of an experiment.
#[derive(Debug, Clone)]
pub struct SensorModel {
    pub grid: GridSpec,
    pub h: [DegradationMatrix; 3],
    pub gradients: GradientOperators,
    pub noise: NoiseModel,
    pub beta_c: f64,
    /// `H(gamma_axis) * G_axis` (with `G_z = I`), shape `N^2 x M^2`.
    hg: [DMatrix<f64>; 3],
}

impl SensorModel {
    pub fn new(
        grid: GridSpec,
        gamma: [f64; 3],
        beta_c: f64,
        sigma: [f64; 3],
        sobel_gain: f64,
    ) -> Result<Self> {
        grid.validate()?;
        let h_x = build_degradation_matrix(&grid, gamma[0])?;
        let h_y = build_degradation_matrix(&grid, gamma[1])?;
        let h_z = build_degradation_matrix(&grid, gamma[2])?;
        let gradients = build_gradient_operators(&grid, sobel_gain)?;
        let noise = NoiseModel::new(sigma, grid.lr_dim())?;
        let hg = [
            &h_x.matrix * &gradients.gx,
            &h_y.matrix * &gradients.gy,
            h_z.matrix.clone(),
        ];
        Ok(Self {
            grid,
            h: [h_x, h_y, h_z],
            gradients,
            noise,
            beta_c,
            hg,
        })
    }

    /// `H(gamma_axis) * G_axis`, the fixed factor of every observation matrix.
    pub fn hg(&self, axis: ObservationAxis) -> &DMatrix<f64> {
        &self.hg[axis.index()]
    }

    /// Clip matrix for pose `m` under this sensor's bandwidth.
    pub fn clip(&self, m: MotionParams) -> Result<ClipMatrix> {
        build_clip_matrix(&self.grid, m, self.beta_c)
    }

    /// Composite observation matrix `A_axis(m) = H(gamma) G_axis C_m`,
    /// shape `N^2 x (alpha*M)^2`.
    pub fn observation_matrix(&self, axis: ObservationAxis, clip: &ClipMatrix) -> DMatrix<f64> {
        let hg = self.hg(axis);
        let mut a = DMatrix::zeros(self.grid.lr_dim(), clip.ncols());
        for i in 0..clip.nrows() {
            let hg_col = hg.column(i);
            for &(j, w) in clip.row(i) {
                let mut a_col = a.column_mut(j);
                a_col.axpy(w, &hg_col, 1.0);
            }
        }
        a
    }
}

/// Degrade an HR Z-channel vector into one LR axis: `H(gamma) G_axis z + eps`
/// with `eps ~ N(0, sigma_axis^2 I)` drawn from the caller's generator.
/// `sigma = 0` yields the noiseless observation without consuming the
/// generator.
pub fn observe<R: Rng + ?Sized>(
    sensor: &SensorModel,
    hr_z: &DVector<f64>,
    axis: ObservationAxis,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if hr_z.len() != sensor.grid.hr_dim() {
        return Err(Error::DimensionMismatch {
            context: "observe",
            expected: sensor.grid.hr_dim(),
            got: hr_z.len(),
        });
    }
    let mut lr = sensor.hg(axis) * hr_z;
    let sigma = sensor.noise.sigma(axis);
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("validated sigma");
        for v in lr.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_grid() -> GridSpec {
        GridSpec::new(2, 4, 2.0, 2.0).unwrap()
    }

    /// Brute-force clip build evaluating every state cell, as written in the
    /// defining formula. Oracle for the windowed production build.
    fn dense_clip_oracle(grid: &GridSpec, m: MotionParams, beta_c: f64) -> DMatrix<f64> {
        let state = grid.cell_centers(Frame::State);
        let mut c = DMatrix::zeros(grid.hr_dim(), grid.state_dim());
        for (i, v) in grid.cell_centers(Frame::HrSensor).iter().enumerate() {
            let u = m.to_state_frame(*v);
            let mut sum = 0.0;
            for (j, s) in state.iter().enumerate() {
                let d2 = (s.x - u.x).powi(2) + (s.y - u.y).powi(2);
                let w = (-d2 / beta_c).exp();
                c[(i, j)] = w;
                sum += w;
            }
            for j in 0..state.len() {
                c[(i, j)] /= sum;
            }
        }
        c
    }

    #[test]
    fn clip_is_identity_on_coincident_grids() {
        let grid = GridSpec::new(2, 5, 1.0, 5.0).unwrap();
        let c = build_clip_matrix(&grid, MotionParams::identity(), 1e-3).unwrap();
        let dense = c.to_dense();
        for i in 0..grid.hr_dim() {
            for j in 0..grid.state_dim() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dense[(i, j)] - expect).abs() < 1e-6);
            }
        }
        assert_eq!(c.degenerate_rows, 0);
    }

    #[test]
    fn clip_concentrates_on_nearest_cell() {
        // single HR cell at origin moved to (1,1); state is 2x2 with centers
        // at (+-0.5, +-0.5), so (0.5, 0.5) = row 0, col 1 must take the mass
        let grid = GridSpec::new(1, 1, 2.0, 2.0).unwrap();
        let c = build_clip_matrix(&grid, MotionParams::new(1.0, 1.0, 0.0), 1e-3).unwrap();
        let row = c.row(0);
        let w: f64 = row
            .iter()
            .filter(|&&(j, _)| j == 1)
            .map(|&(_, w)| w)
            .sum();
        assert!(w >= 0.999, "nearest-cell mass {w}");
    }

    #[test]
    fn clip_rows_sum_to_one_and_match_dense_oracle() {
        let grid = small_grid();
        let m = MotionParams::new(0.35, -0.6, 0.4);
        let beta = 0.05; // wide enough that rows have many entries
        let c = build_clip_matrix(&grid, m, beta).unwrap();
        for i in 0..c.nrows() {
            let sum: f64 = c.row(i).iter().map(|&(_, w)| w).sum();
            assert!((sum - 1.0).abs() < 1e-9, "row {i} sums to {sum}");
        }
        let dense = c.to_dense();
        let oracle = dense_clip_oracle(&grid, m, beta);
        assert_relative_eq!(dense, oracle, epsilon = 1e-12);
    }

    #[test]
    fn clip_degenerate_rows_fall_back_to_nearest_neighbor() {
        // beta so small that every off-center weight underflows
        let grid = small_grid();
        let m = MotionParams::new(0.13, 0.21, 0.3);
        let c = build_clip_matrix(&grid, m, 1e-18).unwrap();
        assert!(c.degenerate_rows > 0);
        for i in 0..c.nrows() {
            let row = c.row(i);
            let sum: f64 = row.iter().map(|&(_, w)| w).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_build_is_deterministic() {
        let grid = small_grid();
        let m = MotionParams::new(0.2, -0.1, 0.7);
        let a = build_clip_matrix(&grid, m, 1e-3).unwrap();
        let b = build_clip_matrix(&grid, m, 1e-3).unwrap();
        for i in 0..a.nrows() {
            assert_eq!(a.row(i).len(), b.row(i).len());
            for (ea, eb) in a.row(i).iter().zip(b.row(i)) {
                assert_eq!(ea.0, eb.0);
                assert_eq!(ea.1.to_bits(), eb.1.to_bits());
            }
        }
    }

    #[test]
    fn degradation_row_maxima_are_one() {
        let grid = GridSpec::new(4, 40, 2.0, 20.0).unwrap();
        for gamma in [0.5, 1.0, 2.0] {
            let h = build_degradation_matrix(&grid, gamma).unwrap();
            for i in 0..h.matrix.nrows() {
                let row_max = h.matrix.row(i).iter().cloned().fold(f64::MIN, f64::max);
                assert!((row_max - 1.0).abs() < 1e-9);
                assert!(h.matrix.row(i).iter().all(|&w| w >= 0.0));
            }
        }
    }

    #[test]
    fn degradation_approaches_identity_for_vanishing_bandwidth() {
        let grid = GridSpec::new(4, 4, 1.0, 4.0).unwrap();
        let h = build_degradation_matrix(&grid, 1e-9).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((h.matrix[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degradation_equidistant_cells_all_normalize_to_one() {
        // N=1, M=2, l=2: all four HR centers sit at distance^2 = 0.5 from the
        // single LR center, so every entry max-normalizes to exactly 1
        let grid = GridSpec::new(1, 2, 1.0, 2.0).unwrap();
        let h = build_degradation_matrix(&grid, 1.0).unwrap();
        assert_eq!(h.matrix.shape(), (1, 4));
        for j in 0..4 {
            assert_eq!(h.matrix[(0, j)], 1.0);
        }
    }

    #[test]
    fn degradation_decays_with_distance() {
        let grid = GridSpec::new(2, 8, 1.0, 8.0).unwrap();
        let h = build_degradation_matrix(&grid, 1.0).unwrap();
        let lr = grid.cell_centers(Frame::LrSensor);
        let hr = grid.cell_centers(Frame::HrSensor);
        for (i, li) in lr.iter().enumerate() {
            let mut pairs: Vec<(f64, f64)> = hr
                .iter()
                .enumerate()
                .map(|(j, hj)| {
                    let d2 = (hj.x - li.x).powi(2) + (hj.y - li.y).powi(2);
                    (d2, h.matrix[(i, j)])
                })
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                assert!(w[0].1 >= w[1].1 - 1e-15);
            }
        }
    }

    #[test]
    fn gradient_operators_reject_tiny_grids() {
        let grid = GridSpec::new(1, 2, 1.0, 2.0).unwrap();
        assert!(matches!(
            build_gradient_operators(&grid, 1.0),
            Err(Error::KernelTooSmall(2))
        ));
    }

    #[test]
    fn sobel_matrix_matches_independent_convolution() {
        // oracle: double-loop convolution written from the kernel definition,
        // independent of both library code paths
        let oracle = |img: &[f64], side: usize, kernel: [[f64; 3]; 3]| -> Vec<f64> {
            let mut out = vec![0.0; img.len()];
            for r in 0..side as isize {
                for c in 0..side as isize {
                    let mut acc = 0.0;
                    for dr in -1isize..=1 {
                        for dc in -1isize..=1 {
                            let rr = (r + dr).clamp(0, side as isize - 1) as usize;
                            let cc = (c + dc).clamp(0, side as isize - 1) as usize;
                            acc += kernel[(dr + 1) as usize][(dc + 1) as usize]
                                * img[rr * side + cc];
                        }
                    }
                    out[(r * side as isize + c) as usize] = acc;
                }
            }
            out
        };

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in [3usize, 5, 8] {
            let grid = GridSpec::new(1, m, 1.0, m as f64).unwrap();
            let ops = build_gradient_operators(&grid, 1.0).unwrap();
            for _ in 0..5 {
                let img: Vec<f64> = (0..m * m).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v = DVector::from_vec(img.clone());
                for (g, axis) in [(&ops.gx, ObservationAxis::X), (&ops.gy, ObservationAxis::Y)] {
                    let by_matrix = g * &v;
                    let expect = oracle(&img, m, sobel_kernel(axis, 1.0));
                    let direct = sobel_filter(&img, m, axis, 1.0);
                    for i in 0..m * m {
                        assert!((by_matrix[i] - expect[i]).abs() < 1e-12);
                        assert!((direct[i] - expect[i]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn sobel_of_constant_is_zero_and_interior_rows_sum_to_zero() {
        let grid = GridSpec::new(2, 6, 1.0, 6.0).unwrap();
        let ops = build_gradient_operators(&grid, 1.0).unwrap();
        let ones = DVector::from_element(36, 3.5);
        assert!((&ops.gx * &ones).amax() < 1e-12);
        assert!((&ops.gy * &ones).amax() < 1e-12);
        for r in 1..5 {
            for c in 1..5 {
                let idx = r * 6 + c;
                assert!(ops.gx.row(idx).sum().abs() < 1e-12);
                assert!(ops.gy.row(idx).sum().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sobel_responds_eight_times_ramp_step() {
        let side = 7usize;
        let step = 0.25;
        // x ramp: value proportional to column
        let img: Vec<f64> = (0..side * side)
            .map(|i| (i % side) as f64 * step)
            .collect();
        let gx = sobel_filter(&img, side, ObservationAxis::X, 1.0);
        for r in 0..side {
            for c in 1..side - 1 {
                assert!((gx[r * side + c] - 8.0 * step).abs() < 1e-12);
            }
        }
        // y ramp increasing upward: value proportional to (side-1-row)
        let img: Vec<f64> = (0..side * side)
            .map(|i| (side - 1 - i / side) as f64 * step)
            .collect();
        let gy = sobel_filter(&img, side, ObservationAxis::Y, 1.0);
        for r in 1..side - 1 {
            for c in 0..side {
                assert!((gy[r * side + c] - 8.0 * step).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn observe_zero_input_is_zero_on_every_axis() {
        let grid = small_grid();
        let sensor = SensorModel::new(grid, [1.0, 1.0, 2.0], 1e-3, [0.0; 3], 1.0).unwrap();
        let zero = DVector::zeros(grid.hr_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for axis in ObservationAxis::ALL {
            let lr = observe(&sensor, &zero, axis, &mut rng).unwrap();
            assert!(lr.amax() == 0.0);
        }
    }

    #[test]
    fn observe_identity_degradation_passes_input_through() {
        let grid = GridSpec::new(4, 4, 1.0, 4.0).unwrap();
        let sensor = SensorModel::new(grid, [1e-9, 1e-9, 1e-9], 1e-3, [0.0; 3], 1.0).unwrap();
        let input = DVector::from_fn(16, |i, _| 0.1 * i as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = observe(&sensor, &input, ObservationAxis::Z, &mut rng).unwrap();
        assert_relative_eq!(out, input, epsilon = 1e-9);
    }

    #[test]
    fn observe_matches_double_loop_weighted_sum() {
        // 4x4 HR patch of ones, N=2, sigma=0, Z axis
        let grid = GridSpec::new(2, 4, 1.0, 4.0).unwrap();
        let sensor = SensorModel::new(grid, [1.0, 1.0, 2.0], 1e-3, [0.0; 3], 1.0).unwrap();
        let ones = DVector::from_element(16, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lr = observe(&sensor, &ones, ObservationAxis::Z, &mut rng).unwrap();

        // independent evaluation of the degradation weights
        let lr_centers = grid.cell_centers(Frame::LrSensor);
        let hr_centers = grid.cell_centers(Frame::HrSensor);
        for (i, li) in lr_centers.iter().enumerate() {
            let raw: Vec<f64> = hr_centers
                .iter()
                .map(|hj| (-((hj.x - li.x).powi(2) + (hj.y - li.y).powi(2)) / 2.0).exp())
                .collect();
            let max = raw.iter().cloned().fold(f64::MIN, f64::max);
            let expect: f64 = raw.iter().map(|w| w / max).sum();
            assert!((lr[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn observe_rejects_wrong_dimension() {
        let grid = small_grid();
        let sensor = SensorModel::new(grid, [1.0, 1.0, 2.0], 1e-3, [0.0; 3], 1.0).unwrap();
        let bad = DVector::zeros(7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            observe(&sensor, &bad, ObservationAxis::Z, &mut rng),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn observation_matrix_has_composite_shape() {
        let grid = small_grid();
        let sensor = SensorModel::new(grid, [1.0, 1.0, 2.0], 1e-3, [0.01; 3], 1.0).unwrap();
        let clip = sensor.clip(MotionParams::new(0.4, -0.3, 0.5)).unwrap();
        for axis in ObservationAxis::ALL {
            let a = sensor.observation_matrix(axis, &clip);
            assert_eq!(a.shape(), (grid.lr_dim(), grid.state_dim()));
        }
    }

    #[test]
    fn observation_matrix_equals_explicit_product() {
        let grid = small_grid();
        let sensor = SensorModel::new(grid, [1.0, 1.0, 2.0], 1e-3, [0.01; 3], 1.0).unwrap();
        let clip = sensor.clip(MotionParams::new(0.4, -0.3, 0.5)).unwrap();
        let dense_c = clip.to_dense();
        for axis in ObservationAxis::ALL {
            let a = sensor.observation_matrix(axis, &clip);
            let explicit = sensor.hg(axis) * &dense_c;
            assert_relative_eq!(a, explicit, epsilon = 1e-13);
        }
    }

    proptest! {
        // linearity of the noiseless observation
        #[test]
        fn observe_is_linear(seed in 0u64..500, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let grid = small_grid();
            let sensor = SensorModel::new(grid, [1.0, 1.0, 2.0], 1e-3, [0.0; 3], 1.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = DVector::from_fn(grid.hr_dim(), |_, _| rng.random_range(-1.0..1.0));
            let w = DVector::from_fn(grid.hr_dim(), |_, _| rng.random_range(-1.0..1.0));
            let combo = a * &u + b * &w;
            for axis in ObservationAxis::ALL {
                let lhs = observe(&sensor, &combo, axis, &mut rng).unwrap();
                let rhs = a * observe(&sensor, &u, axis, &mut rng).unwrap()
                    + b * observe(&sensor, &w, axis, &mut rng).unwrap();
                prop_assert!((lhs - rhs).amax() < 1e-10);
            }
        }
    }
}
