//! Numerical near-parabolic renormalization of quadratic polynomials.
//!
//! Layering, bottom to top: [`arith`] (continued fractions and Brjuno sums),
//! [`maps`] (the dynamical maps), [`lift`] (the covering `tau` and the lifted
//! map `F`), [`fatou`] (perturbed Fatou coordinates and the model map `H`),
//! [`renorm`] (return maps and the renormalization tower) and [`measure`]
//! (post-critical clouds, box counting, porosity, limit sets).

pub mod arith;
pub mod error;
pub mod fatou;
pub mod jet;
pub mod lift;
pub mod maps;
pub mod measure;
pub mod renorm;
pub mod stats;

pub use error::{Error, Result};
pub use num_complex::Complex64;
