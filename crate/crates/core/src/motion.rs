//! Sensor poses and the discretized action space.

use serde::{Deserialize, Serialize};

use crate::grid::{CellLocation, Frame, GridSpec};
use crate::{Error, Result};

/// Planar sensor pose relative to the pose of the first tap: translational
/// offsets in mm and rotation about Z in radians.
///
/// Legality (theta within `[-pi/2, pi/2]`, sensor center inside the state
/// region) is enforced where poses are enumerated, in [`ActionSpace::build`],
/// not per construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub x_mm: f64,
    pub y_mm: f64,
    pub theta_rad: f64,
}

impl MotionParams {
    pub fn new(x_mm: f64, y_mm: f64, theta_rad: f64) -> Self {
        Self {
            x_mm,
            y_mm,
            theta_rad,
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// Rotation matrix entries `(cos, sin)` for this pose.
    pub fn rotation(&self) -> (f64, f64) {
        (self.theta_rad.cos(), self.theta_rad.sin())
    }

    /// Map a sensor-frame point into the state frame: `R(theta) v + (x, y)`.
    pub fn to_state_frame(&self, v: CellLocation) -> CellLocation {
        debug_assert_ne!(v.frame, Frame::State);
        let (c, s) = self.rotation();
        CellLocation::new(
            c * v.x - s * v.y + self.x_mm,
            s * v.x + c * v.y + self.y_mm,
            Frame::State,
        )
    }

    /// The motion that undoes this one: `(-R(-theta) (x, y), -theta)`.
    pub fn inverse(&self) -> Self {
        let (c, s) = self.rotation();
        // R(-theta) * (x, y) with R(-theta) = [[c, s], [-s, c]]
        Self::new(
            -(c * self.x_mm + s * self.y_mm),
            -(-s * self.x_mm + c * self.y_mm),
            -self.theta_rad,
        )
    }
}

/// Map a sensor-frame cell location into the state frame under pose `m`.
pub fn transform_to_state_frame(m: MotionParams, v: CellLocation) -> CellLocation {
    m.to_state_frame(v)
}

/// The enumerable pose grid `X x Y x Theta`.
///
/// `X` and `Y` span `[-l_state/2, +l_state/2]` in steps of `dx_mm` with both
/// endpoints included; `Theta` spans `[-pi/2, +pi/2]` in steps of
/// `dtheta_rad`. Enumeration order is theta-major, then y, then x, and is the
/// index order used for deterministic tie-breaking in action selection.
#[derive(Debug, Clone)]
pub struct ActionSpace {
    pub dx_mm: f64,
    pub dtheta_rad: f64,
    xs: Vec<f64>,
    ys: Vec<f64>,
    thetas: Vec<f64>,
}

fn inclusive_range(start: f64, end: f64, step: f64) -> Vec<f64> {
    let span = end - start;
    let count = (span / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| start + i as f64 * step).collect()
}

impl ActionSpace {
    pub fn build(grid: &GridSpec, dx_mm: f64, dtheta_rad: f64) -> Result<Self> {
        if !(dx_mm > 0.0) || !(dtheta_rad > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "action steps must be positive (dx={dx_mm} mm, dtheta={dtheta_rad} rad)"
            )));
        }
        let half = grid.l_state_mm() / 2.0;
        Ok(Self {
            dx_mm,
            dtheta_rad,
            xs: inclusive_range(-half, half, dx_mm),
            ys: inclusive_range(-half, half, dx_mm),
            thetas: inclusive_range(
                -std::f64::consts::FRAC_PI_2,
                std::f64::consts::FRAC_PI_2,
                dtheta_rad,
            ),
        })
    }

    pub fn translation_values(&self) -> &[f64] {
        &self.xs
    }

    pub fn theta_values(&self) -> &[f64] {
        &self.thetas
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len() * self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Enumeration index of the grid pose nearest to `m`, when `m` lies on
    /// the pose grid to within a small tolerance.
    pub fn index_of(&self, m: &MotionParams) -> Option<usize> {
        let locate = |values: &[f64], v: f64, tol: f64| -> Option<usize> {
            let step = if values.len() > 1 {
                values[1] - values[0]
            } else {
                1.0
            };
            let i = ((v - values[0]) / step).round();
            if i < 0.0 || i >= values.len() as f64 {
                return None;
            }
            let i = i as usize;
            ((values[i] - v).abs() <= tol).then_some(i)
        };
        let ix = locate(&self.xs, m.x_mm, 1e-9)?;
        let iy = locate(&self.ys, m.y_mm, 1e-9)?;
        let it = locate(&self.thetas, m.theta_rad, 1e-9)?;
        Some(it * self.xs.len() * self.ys.len() + iy * self.xs.len() + ix)
    }

    /// Pose with the given enumeration index.
    pub fn get(&self, index: usize) -> MotionParams {
        let per_theta = self.xs.len() * self.ys.len();
        let theta = self.thetas[index / per_theta];
        let rem = index % per_theta;
        let y = self.ys[rem / self.xs.len()];
        let x = self.xs[rem % self.xs.len()];
        MotionParams::new(x, y, theta)
    }

    /// All poses in enumeration order.
    pub fn iter(&self) -> impl Iterator<Item = MotionParams> + '_ {
        self.thetas.iter().flat_map(move |&theta| {
            self.ys.iter().flat_map(move |&y| {
                self.xs
                    .iter()
                    .map(move |&x| MotionParams::new(x, y, theta))
            })
        })
    }

    /// True when `m`'s center lies inside the state region and its rotation
    /// within `[-pi/2, pi/2]`, to a small tolerance.
    pub fn is_legal(&self, grid: &GridSpec, m: &MotionParams) -> bool {
        let half = grid.l_state_mm() / 2.0 + 1e-9;
        m.x_mm.abs() <= half
            && m.y_mm.abs() <= half
            && m.theta_rad.abs() <= std::f64::consts::FRAC_PI_2 + 1e-9
    }
}
