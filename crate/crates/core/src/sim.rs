//! Simulated sensor rig: hidden ground-truth surfaces and the tap primitive.
//!
//! The simulator shares the experiment's `SensorModel`, so the data it
//! produces follows exactly the forward model the filter assumes (clip, then
//! per-axis gradient and degradation, then noise). Divergence between the two
//! sides is structurally impossible unless a mismatched sensor is supplied on
//! purpose.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::filter::ObservationFrame;
use crate::grid::GridSpec;
use crate::imageio;
use crate::motion::MotionParams;
use crate::operators::{ObservationAxis, SensorModel};
use crate::{Error, Result};

/// Subsamples per cell axis when rasterizing procedural shapes.
const SUPERSAMPLE: usize = 4;

fn default_value() -> f64 {
    1.0
}

/// A ground-truth surface source: an image file or a procedural shape.
/// Coordinates and lengths are in mm within the state frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    /// 8-bit grayscale PGM (P5) or PNG, resampled to the state grid.
    File { path: PathBuf },
    Disk {
        cx: f64,
        cy: f64,
        radius: f64,
        #[serde(default = "default_value")]
        value: f64,
    },
    Rectangle {
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
        #[serde(default)]
        angle_deg: f64,
        #[serde(default = "default_value")]
        value: f64,
    },
    Ring {
        cx: f64,
        cy: f64,
        r_inner: f64,
        r_outer: f64,
        #[serde(default = "default_value")]
        value: f64,
    },
    /// Two centered orthogonal bars.
    Cross {
        cx: f64,
        cy: f64,
        arm_length: f64,
        arm_width: f64,
        #[serde(default = "default_value")]
        value: f64,
    },
    /// A stroked polyline, e.g. a letter skeleton.
    Polyline {
        points: Vec<[f64; 2]>,
        stroke_width: f64,
        #[serde(default = "default_value")]
        value: f64,
    },
    /// Elementwise maximum of the parts.
    Composite { parts: Vec<SurfaceSpec> },
}

impl SurfaceSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::File { .. } => "file",
            Self::Disk { .. } => "disk",
            Self::Rectangle { .. } => "rectangle",
            Self::Ring { .. } => "ring",
            Self::Cross { .. } => "cross",
            Self::Polyline { .. } => "polyline",
            Self::Composite { .. } => "composite",
        }
    }

    /// Default surface identifier: the file stem, or the shape kind.
    pub fn default_id(&self) -> String {
        match self {
            Self::File { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into()),
            other => other.kind_name().to_string(),
        }
    }

    /// Shape intensity at a state-frame point; `None` for file sources.
    fn sample(&self, x: f64, y: f64) -> Option<f64> {
        match *self {
            Self::File { .. } => None,
            Self::Disk {
                cx,
                cy,
                radius,
                value,
            } => {
                let inside = (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius;
                Some(if inside { value } else { 0.0 })
            }
            Self::Rectangle {
                cx,
                cy,
                width,
                height,
                angle_deg,
                value,
            } => {
                let a = -angle_deg.to_radians();
                let (c, s) = (a.cos(), a.sin());
                let lx = c * (x - cx) - s * (y - cy);
                let ly = s * (x - cx) + c * (y - cy);
                let inside = lx.abs() <= width / 2.0 && ly.abs() <= height / 2.0;
                Some(if inside { value } else { 0.0 })
            }
            Self::Ring {
                cx,
                cy,
                r_inner,
                r_outer,
                value,
            } => {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                let inside = d2 <= r_outer * r_outer && d2 >= r_inner * r_inner;
                Some(if inside { value } else { 0.0 })
            }
            Self::Cross {
                cx,
                cy,
                arm_length,
                arm_width,
                value,
            } => {
                let (dx, dy) = ((x - cx).abs(), (y - cy).abs());
                let horiz = dx <= arm_length / 2.0 && dy <= arm_width / 2.0;
                let vert = dy <= arm_length / 2.0 && dx <= arm_width / 2.0;
                Some(if horiz || vert { value } else { 0.0 })
            }
            Self::Polyline {
                ref points,
                stroke_width,
                value,
            } => {
                let half = stroke_width / 2.0;
                let hit = points.windows(2).any(|seg| {
                    dist_to_segment(x, y, seg[0], seg[1]) <= half
                }) || (points.len() == 1 && {
                    let [px, py] = points[0];
                    ((x - px).powi(2) + (y - py).powi(2)).sqrt() <= half
                });
                Some(if hit { value } else { 0.0 })
            }
            Self::Composite { ref parts } => {
                let mut best = 0.0f64;
                for p in parts {
                    best = best.max(p.sample(x, y)?);
                }
                Some(best)
            }
        }
    }

    fn contains_file(&self) -> bool {
        match self {
            Self::File { .. } => true,
            Self::Composite { parts } => parts.iter().any(|p| p.contains_file()),
            _ => false,
        }
    }
}

fn dist_to_segment(x: f64, y: f64, a: [f64; 2], b: [f64; 2]) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let (apx, apy) = (x - a[0], y - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    (dx * dx + dy * dy).sqrt()
}

/// The hidden dense heightmap the simulator taps, values in `[0, 1]`,
/// flattened in the project convention.
#[derive(Debug, Clone)]
pub struct GroundTruthSurface {
    values: DVector<f64>,
    side: usize,
    pub l_state_mm: f64,
    pub id: String,
}

impl GroundTruthSurface {
    pub fn from_values(values: DVector<f64>, grid: &GridSpec, id: String) -> Result<Self> {
        if values.len() != grid.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "ground-truth surface",
                expected: grid.state_dim(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidSurface(format!(
                "surface '{id}' has values outside [0, 1]"
            )));
        }
        Ok(Self {
            values,
            side: grid.state_side(),
            l_state_mm: grid.l_state_mm(),
            id,
        })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn side(&self) -> usize {
        self.side
    }
}

/// Load or rasterize a surface onto the state grid.
///
/// Files are resampled bilinearly and scaled to `[0, 1]`; shapes are
/// rasterized with 4x4 subsamples per cell, so boundary cells take fractional
/// coverage values.
pub fn load_surface(spec: &SurfaceSpec, grid: &GridSpec, id: Option<String>) -> Result<GroundTruthSurface> {
    let id = id.unwrap_or_else(|| spec.default_id());
    let side = grid.state_side();
    match spec {
        SurfaceSpec::File { path } => {
            let img = imageio::read_gray(Path::new(path))?;
            let values = imageio::resample_bilinear(
                &img.to_values(),
                img.width,
                img.height,
                side,
                side,
            );
            GroundTruthSurface::from_values(DVector::from_vec(values), grid, id)
        }
        SurfaceSpec::Composite { parts } if spec.contains_file() => {
            // composite of files and shapes: load each part, take the max
            let mut acc = DVector::zeros(grid.state_dim());
            if parts.is_empty() {
                return Err(Error::InvalidSurface("empty composite".into()));
            }
            for part in parts {
                let s = load_surface(part, grid, None)?;
                acc.zip_apply(s.values(), |a: &mut f64, b: f64| *a = a.max(b));
            }
            GroundTruthSurface::from_values(acc, grid, id)
        }
        shape => {
            if let SurfaceSpec::Composite { parts } = shape {
                if parts.is_empty() {
                    return Err(Error::InvalidSurface("empty composite".into()));
                }
            }
            if let SurfaceSpec::Polyline { points, .. } = shape {
                if points.is_empty() {
                    return Err(Error::InvalidSurface("empty polyline".into()));
                }
            }
            let pitch = grid.l_state_mm() / side as f64;
            let half = grid.l_state_mm() / 2.0;
            let sub = SUPERSAMPLE;
            let sub_step = pitch / sub as f64;
            let mut values = Vec::with_capacity(side * side);
            for r in 0..side {
                let y0 = half - r as f64 * pitch;
                for c in 0..side {
                    let x0 = -half + c as f64 * pitch;
                    let mut acc = 0.0;
                    for sr in 0..sub {
                        let y = y0 - (sr as f64 + 0.5) * sub_step;
                        for sc in 0..sub {
                            let x = x0 + (sc as f64 + 0.5) * sub_step;
                            acc += shape.sample(x, y).expect("shape source");
                        }
                    }
                    values.push(acc / (sub * sub) as f64);
                }
            }
            GroundTruthSurface::from_values(DVector::from_vec(values), grid, id)
        }
    }
}

/// One commanded tap.
#[derive(Debug, Clone, Copy)]
pub struct TapCommand {
    pub motion: MotionParams,
    /// Draw observation noise from the generator; `false` forces the
    /// noiseless forward model regardless of the sensor's sigma.
    pub noise: bool,
    pub tap_index: usize,
}

/// Execute a tap: clip the hidden surface at the commanded pose, push the HR
/// window through the triaxial forward model, and return the LR frame with
/// the pose echoed back exactly (pose errors are not modeled).
pub fn execute_tap<R: Rng + ?Sized>(
    surface: &GroundTruthSurface,
    cmd: TapCommand,
    sensor: &SensorModel,
    rng: &mut R,
) -> Result<ObservationFrame> {
    if surface.values.len() != sensor.grid.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "tap surface",
            expected: sensor.grid.state_dim(),
            got: surface.values.len(),
        });
    }
    let clip = sensor.clip(cmd.motion)?;
    let hr_z = clip.apply(&surface.values)?;
    let mut channels: [Option<DVector<f64>>; 3] = [None, None, None];
    for axis in ObservationAxis::ALL {
        let mut lr = sensor.hg(axis) * &hr_z;
        let sigma = sensor.noise.sigma(axis);
        if cmd.noise && sigma > 0.0 {
            let normal = rand_distr::Normal::new(0.0, sigma).expect("validated sigma");
            for v in lr.iter_mut() {
                *v += rand_distr::Distribution::sample(&normal, rng);
            }
        }
        channels[axis.index()] = Some(lr);
    }
    let [x, y, z] = channels;
    Ok(ObservationFrame {
        x: x.unwrap(),
        y: y.unwrap(),
        z: z.unwrap(),
        motion: cmd.motion,
        tap_index: cmd.tap_index,
    })
}
