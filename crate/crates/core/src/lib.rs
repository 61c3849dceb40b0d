//! Dense high-resolution reconstruction of 2-D contact surfaces from
//! low-resolution triaxial tactile sequences.
//!
//! A taxel array senses an `N x N` low-resolution (LR) view of the surface it
//! taps. This crate treats each tap as a linear Gaussian observation of a
//! hidden high-resolution (HR) heightmap: the tap pose clips a window out of
//! the state grid, a Gaussian degradation operator blurs HR taxels down to LR
//! taxels, and the X/Y channels observe Sobel gradients of the Z channel. A
//! Kalman filter fuses the three channels of every tap into a dense posterior
//! over the full reconstruction region, and an explore-then-exploit policy
//! picks the next tap pose from the current contour and uncertainty maps.
//!
//! Modules follow the data path:
//!
//! - [`grid`] / [`motion`]: grid geometry, flattening, poses, action space
//! - [`operators`]: clip, degradation, gradient and noise operators
//! - [`filter`]: Gaussian state estimate and the sequential triaxial update
//! - [`explore`]: gradient/uncertainty/decision maps and tap selection
//! - [`sim`]: ground-truth surfaces and the simulated tap
//! - [`metrics`]: SSIM/MSE/PSNR and per-episode logs
//! - [`harness`]: experiment configuration, episodes, suites
//!
//! The [`harness`] module is what the `tactile-recon` CLI drives; everything
//! below it is usable as a library.

pub mod checkpoint;
pub mod config;
pub mod explore;
pub mod filter;
pub mod grid;
pub mod harness;
pub mod imageio;
pub mod metrics;
pub mod motion;
pub mod operators;
pub mod sim;

pub use config::ExperimentConfig;
pub use filter::{ObservationFrame, PriorConfig, StateEstimate};
pub use grid::{CellLocation, Frame, GridSpec};
pub use motion::{ActionSpace, MotionParams};
pub use operators::{ObservationAxis, SensorModel};
pub use sim::GroundTruthSurface;


/// Errors surfaced by every module in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("gradient operator needs at least a 3x3 grid, got {0}x{0}")]
    KernelTooSmall(usize),

    #[error(
        "innovation covariance is not invertible ({0}); \
         set a positive noise floor on Q (sigma > 0)"
    )]
    SingularInnovation(String),

    #[error("non-positive variance {value:.3e} at state cell {index}; covariance is corrupted")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("prior covariance is not positive definite: smallest eigenvalue {0:.3e}")]
    NonPositiveDefinitePrior(f64),

    #[error("invalid surface: {0}")]
    InvalidSurface(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("image format: {0}")]
    ImageFormat(String),

    #[error("episode failed at tap {tap}: {source}")]
    EpisodeAborted {
        tap: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
