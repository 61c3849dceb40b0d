//! Experiment configuration: TOML sections with the reference experiment
//! constants as defaults, so a zero-argument run reproduces the full-scale
//! setup (N=4, M=40, alpha=2, 20 mm sensor, dx=0.5 mm, dtheta=5 deg,
//! lambda=0.7, beta_c=1e-3, gamma=(1,1,2), sigma=0.01, T=30).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::explore::Policy;
use crate::filter::PriorConfig;
use crate::grid::GridSpec;
use crate::motion::ActionSpace;
use crate::operators::SensorModel;
use crate::sim::SurfaceSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub l_sensor_mm: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            n: 4,
            m: 40,
            alpha: 2.0,
            l_sensor_mm: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub amplitude: f64,
    /// Defaults to two HR cell pitches when absent.
    pub length_scale_mm: Option<f64>,
    pub mean: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            length_scale_mm: None,
            mean: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSection {
    /// Degradation bandwidths per axis `[x, y, z]` in mm^2.
    pub gamma: [f64; 3],
    /// Clip similarity bandwidth in mm^2.
    pub beta_c: f64,
    /// Observation noise sigma per axis.
    pub noise_sigma: [f64; 3],
    /// Scale applied to the raw Sobel kernel; recorded here so the simulator
    /// and the filter always agree.
    pub sobel_gain: f64,
}

impl Default for SensorSection {
    fn default() -> Self {
        Self {
            gamma: [1.0, 1.0, 2.0],
            beta_c: 1e-3,
            noise_sigma: [0.01; 3],
            sobel_gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreSection {
    /// Explore-to-exploit transition rate.
    pub lambda: f64,
    /// Policy used by `run`.
    pub policy: Policy,
    /// Policies crossed by `suite`.
    pub policies: Vec<Policy>,
    pub dx_mm: f64,
    pub dtheta_deg: f64,
}

impl Default for ExploreSection {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            policy: Policy::Active,
            policies: vec![Policy::Active, Policy::PureUncertainty, Policy::Random],
            dx_mm: 0.5,
            dtheta_deg: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSection {
    /// Tap budget T.
    pub taps: usize,
    pub seeds: Vec<u64>,
    /// Which observation axes the filter consumes.
    pub axes: Vec<String>,
    /// Stop an episode early once the state SSIM reaches this value.
    pub stop_at_ssim: Option<f64>,
    /// SSIM target used for the taps-to-target summary column.
    pub target_ssim: f64,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        Self {
            taps: 30,
            seeds: vec![0],
            axes: vec!["x".into(), "y".into(), "z".into()],
            stop_at_ssim: None,
            target_ssim: 0.7,
        }
    }
}

/// Optional forward-model mismatch: simulate with different degradation or
/// noise than the filter assumes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorSection {
    pub gamma_override: Option<[f64; 3]>,
    pub sigma_override: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Tap counts at which reconstruction and decision-map snapshots are saved.
    pub snapshot_taps: Vec<usize>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            snapshot_taps: vec![1, 10, 30],
        }
    }
}

fn default_surfaces() -> Vec<SurfaceSpec> {
    vec![SurfaceSpec::Disk {
        cx: 0.0,
        cy: 0.0,
        radius: 10.0,
        value: 1.0,
    }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub prior: PriorSection,
    pub sensor: SensorSection,
    pub explore: ExploreSection,
    pub episode: EpisodeSection,
    pub simulator: SimulatorSection,
    pub output: OutputSection,
    pub surfaces: Vec<SurfaceSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: GridSection::default(),
            prior: PriorSection::default(),
            sensor: SensorSection::default(),
            explore: ExploreSection::default(),
            episode: EpisodeSection::default(),
            simulator: SimulatorSection::default(),
            output: OutputSection::default(),
            surfaces: default_surfaces(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(
            self.grid.n,
            self.grid.m,
            self.grid.alpha,
            self.grid.l_sensor_mm,
        )
    }

    pub fn prior_config(&self, grid: &GridSpec) -> PriorConfig {
        PriorConfig {
            amplitude: self.prior.amplitude,
            length_scale_mm: self
                .prior
                .length_scale_mm
                .unwrap_or(2.0 * grid.state_pitch()),
            mean: self.prior.mean,
        }
    }

    pub fn dtheta_rad(&self) -> f64 {
        self.explore.dtheta_deg.to_radians()
    }

    pub fn action_space(&self, grid: &GridSpec) -> Result<ActionSpace> {
        ActionSpace::build(grid, self.explore.dx_mm, self.dtheta_rad())
    }

    /// The sensor the filter assumes.
    pub fn filter_sensor(&self, grid: GridSpec) -> Result<SensorModel> {
        SensorModel::new(
            grid,
            self.sensor.gamma,
            self.sensor.beta_c,
            self.sensor.noise_sigma,
            self.sensor.sobel_gain,
        )
    }

    /// The sensor the simulator uses: identical to the filter's unless an
    /// override is configured.
    pub fn sim_sensor(&self, grid: GridSpec) -> Result<SensorModel> {
        let gamma = self.simulator.gamma_override.unwrap_or(self.sensor.gamma);
        let sigma = self
            .simulator
            .sigma_override
            .unwrap_or(self.sensor.noise_sigma);
        SensorModel::new(grid, gamma, self.sensor.beta_c, sigma, self.sensor.sobel_gain)
    }

    pub fn axes_mask(&self) -> Result<[bool; 3]> {
        let mut mask = [false; 3];
        for a in &self.episode.axes {
            match a.as_str() {
                "x" => mask[0] = true,
                "y" => mask[1] = true,
                "z" => mask[2] = true,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown axis '{other}', want x, y or z"
                    )))
                }
            }
        }
        if mask == [false; 3] {
            return Err(Error::InvalidConfig("no observation axes enabled".into()));
        }
        Ok(mask)
    }

    /// Full validation, including existence of referenced surface files.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid_spec()?;
        self.prior_config(&grid).validate()?;
        if self.episode.taps < 1 {
            return Err(Error::InvalidConfig("tap budget must be at least 1".into()));
        }
        if self.episode.seeds.is_empty() {
            return Err(Error::InvalidConfig("seed list must not be empty".into()));
        }
        if self.surfaces.is_empty() {
            return Err(Error::InvalidConfig("no surfaces configured".into()));
        }
        if self.explore.policies.is_empty() {
            return Err(Error::InvalidConfig("suite policy list is empty".into()));
        }
        if !(self.explore.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda={} must be non-negative",
                self.explore.lambda
            )));
        }
        if self.sensor.gamma.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be positive, got {:?}",
                self.sensor.gamma
            )));
        }
        if !(self.sensor.beta_c > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "beta_c={} must be positive",
                self.sensor.beta_c
            )));
        }
        self.axes_mask()?;
        self.action_space(&grid)?;
        fn check_files(spec: &SurfaceSpec) -> Result<()> {
            match spec {
                SurfaceSpec::File { path } => {
                    if !path.exists() {
                        return Err(Error::InvalidConfig(format!(
                            "surface file does not exist: {}",
                            path.display()
                        )));
                    }
                    Ok(())
                }
                SurfaceSpec::Composite { parts } => {
                    parts.iter().try_for_each(check_files)
                }
                _ => Ok(()),
            }
        }
        self.surfaces.iter().try_for_each(check_files)?;
        Ok(())
    }
}
