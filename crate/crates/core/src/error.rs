//! Error type shared by every module.

use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid continued-fraction digit {digit} at position {index}")]
    InvalidDigit { index: usize, digit: i64 },
    #[error("value {0} outside (0, 1)")]
    Boundary(f64),
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("requested depth {requested} exceeds available depth {available}")]
    Depth { requested: usize, available: usize },
    #[error("point {z} outside the domain of the map")]
    OutOfDomain { z: Complex64 },
    #[error("no nonzero fixed point found near 0 (residual {residual:e})")]
    NoSigma { residual: f64 },
    #[error("pole of the covering at w = {w}")]
    Pole { w: Complex64 },
    #[error("no branch with real part in [{lo}, {hi}] for {z}")]
    BranchWindow { z: Complex64, lo: f64, hi: f64 },
    #[error("logarithm argument {arg} on the branch cut")]
    BranchCut { arg: Complex64 },
    #[error("Fatou chart residual {achieved:e} above target {target:e}")]
    ChartQuality { achieved: f64, target: f64 },
    #[error("chart transport left the usable region at {z}")]
    Transport { z: Complex64 },
    #[error("inversion stalled at {best} with residual {residual:e}")]
    Inversion { best: Complex64, residual: f64 },
    #[error("no admissible extension index for {0}")]
    ExtensionDomain(Complex64),
    #[error("orbit escaped at step {index}")]
    Escape { index: usize },
    #[error("pullback count exceeded {0}")]
    Runaway(usize),
    #[error("no representative of {0} in the sector hull")]
    Representative(Complex64),
    #[error("descent stuck at level {0}")]
    DescentStuck(usize),
    #[error("model anchor {0} violates the strip condition")]
    Anchor(Complex64),
    #[error("degenerate regression: {0}")]
    Degenerate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}
