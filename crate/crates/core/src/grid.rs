//! Grid geometry and the flattening convention shared by every module.
//!
//! Three square grids cover the problem: the LR sensor (`N x N` taxels), the
//! idealized HR sensor (`M x M` taxels over the same physical side), and the
//! state grid (`alpha*M x alpha*M` cells over a side `alpha` times larger).
//!
//! Flattening is row-major with the origin at the grid center, X rightward
//! and Y upward. Row 0 is the **top** row (largest y), matching 8-bit image
//! I/O, so `index = row * side + col` and
//!
//! ```text
//! x(col) = -side_mm/2 + (col + 0.5) * pitch
//! y(row) = +side_mm/2 - (row + 0.5) * pitch
//! ```
//!
//! Every operator in this crate (clip windows, Sobel matrices, footprint
//! scoring, image import/export) relies on this one convention.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Floating tolerance for grid-consistency checks.
const GRID_TOL: f64 = 1e-12;

/// Which grid a coordinate or index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// The `(alpha*M)^2` reconstruction region, fixed in space.
    State,
    /// The `M^2` idealized HR sensor, attached to the sensor.
    HrSensor,
    /// The `N^2` physical LR sensor, attached to the sensor.
    LrSensor,
}

/// A cell-center position in millimetres within a named frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellLocation {
    pub x: f64,
    pub y: f64,
    pub frame: Frame,
}

impl CellLocation {
    pub fn new(x: f64, y: f64, frame: Frame) -> Self {
        Self { x, y, frame }
    }
}

/// Sensor/state grid dimensions and physical sizes.
///
/// `n` LR taxels and `m` HR taxels per side share the sensor side
/// `l_sensor_mm`; the state grid has `alpha * m` cells per side over
/// `alpha * l_sensor_mm`. All three grids therefore share one cell pitch
/// `l_sensor_mm / m` for the HR/state case and `l_sensor_mm / n` for LR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// LR taxels per side (`N`).
    pub n: usize,
    /// HR taxels per side (`M > N`).
    pub m: usize,
    /// Ratio of state side to sensor side (`alpha >= 1`).
    pub alpha: f64,
    /// Physical sensor side in mm.
    pub l_sensor_mm: f64,
}

impl GridSpec {
    pub fn new(n: usize, m: usize, alpha: f64, l_sensor_mm: f64) -> Result<Self> {
        let spec = Self {
            n,
            m,
            alpha,
            l_sensor_mm,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidGrid("taxel counts must be positive".into()));
        }
        if self.m < self.n {
            return Err(Error::InvalidGrid(format!(
                "HR count M={} must be at least LR count N={}",
                self.m, self.n
            )));
        }
        if !(self.alpha >= 1.0) {
            return Err(Error::InvalidGrid(format!("alpha={} must be >= 1", self.alpha)));
        }
        if !(self.l_sensor_mm > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "sensor side {} mm must be positive",
                self.l_sensor_mm
            )));
        }
        let cells = self.alpha * self.m as f64;
        if (cells - cells.round()).abs() > 1e-9 {
            return Err(Error::InvalidGrid(format!(
                "alpha*M = {} must be an integer cell count",
                cells
            )));
        }
        Ok(())
    }

    /// State cells per side (`alpha * M`).
    pub fn state_side(&self) -> usize {
        (self.alpha * self.m as f64).round() as usize
    }

    /// Flattened state dimension `(alpha*M)^2`.
    pub fn state_dim(&self) -> usize {
        self.state_side() * self.state_side()
    }

    /// Flattened HR sensor dimension `M^2`.
    pub fn hr_dim(&self) -> usize {
        self.m * self.m
    }

    /// Flattened LR sensor dimension `N^2`.
    pub fn lr_dim(&self) -> usize {
        self.n * self.n
    }

    /// Physical state side in mm (`alpha * l_sensor`).
    pub fn l_state_mm(&self) -> f64 {
        self.alpha * self.l_sensor_mm
    }

    /// LR resolution in taxels per mm.
    pub fn d_lr(&self) -> f64 {
        self.n as f64 / self.l_sensor_mm
    }

    /// HR resolution in taxels per mm.
    pub fn d_hr(&self) -> f64 {
        self.m as f64 / self.l_sensor_mm
    }

    /// Cell pitch of the state grid (equals the HR sensor pitch) in mm.
    pub fn state_pitch(&self) -> f64 {
        self.l_sensor_mm / self.m as f64
    }

    fn frame_layout(&self, frame: Frame) -> (usize, f64) {
        match frame {
            Frame::State => (self.state_side(), self.l_state_mm()),
            Frame::HrSensor => (self.m, self.l_sensor_mm),
            Frame::LrSensor => (self.n, self.l_sensor_mm),
        }
    }

    /// Side length in cells of the given frame's grid.
    pub fn side_cells(&self, frame: Frame) -> usize {
        self.frame_layout(frame).0
    }

    /// Center position of the cell at `(row, col)` in the given frame.
    pub fn cell_center(&self, frame: Frame, row: usize, col: usize) -> CellLocation {
        let (side, len) = self.frame_layout(frame);
        debug_assert!(row < side && col < side);
        let pitch = len / side as f64;
        CellLocation::new(
            -len / 2.0 + (col as f64 + 0.5) * pitch,
            len / 2.0 - (row as f64 + 0.5) * pitch,
            frame,
        )
    }

    /// All cell centers of a frame in flattening order (row-major, row 0 on top).
    pub fn cell_centers(&self, frame: Frame) -> Vec<CellLocation> {
        let (side, _) = self.frame_layout(frame);
        let mut out = Vec::with_capacity(side * side);
        for row in 0..side {
            for col in 0..side {
                out.push(self.cell_center(frame, row, col));
            }
        }
        out
    }

    /// Flattened index of `(row, col)` in the given frame.
    pub fn flat_index(&self, frame: Frame, row: usize, col: usize) -> usize {
        row * self.side_cells(frame) + col
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn row_col(&self, frame: Frame, index: usize) -> (usize, usize) {
        let side = self.side_cells(frame);
        (index / side, index % side)
    }

    /// Nearest cell `(row, col)` of `frame` to a point given in that frame's
    /// coordinates, clamped to the grid.
    pub fn nearest_cell(&self, frame: Frame, x: f64, y: f64) -> (usize, usize) {
        let (side, len) = self.frame_layout(frame);
        let pitch = len / side as f64;
        let col = ((x + len / 2.0) / pitch - 0.5).round();
        let row = ((len / 2.0 - y) / pitch - 0.5).round();
        let clamp = |v: f64| -> usize {
            if v < 0.0 {
                0
            } else if v > (side - 1) as f64 {
                side - 1
            } else {
                v as usize
            }
        };
        (clamp(row), clamp(col))
    }

    /// Check the derived-resolution identities to floating tolerance.
    pub fn resolutions_consistent(&self) -> bool {
        (self.d_lr() * self.l_sensor_mm - self.n as f64).abs() <= GRID_TOL * self.n as f64
            && (self.d_hr() * self.l_sensor_mm - self.m as f64).abs() <= GRID_TOL * self.m as f64
            && (self.l_state_mm() - self.alpha * self.l_sensor_mm).abs()
                <= GRID_TOL * self.l_state_mm()
    }
}
