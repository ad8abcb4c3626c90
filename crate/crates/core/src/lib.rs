//! Free additive convolution of atomic spectral measures, Haar-conjugated
//! random matrix ensembles `H = A + U B U*`, and Monte Carlo checks of the
//! local law and eigenvector delocalization for those ensembles.
//!
//! Numerical code is generic over the scalar type (`f32`/`f64`) through
//! [`Real`] and [`LinalgReal`]; the aliases below fix it to `f64`.

pub mod error;
pub mod haar;
pub mod locallaw;
pub mod measure;
pub mod resolvent;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod subordination;

pub use error::{Error, Result};
pub use scalar::{LinalgReal, Real};

pub type C64 = num_complex::Complex<f64>;
pub type Measure = measure::DiscreteMeasure<f64>;
pub type Point = measure::HalfPlanePoint<f64>;
pub type Pair = subordination::SubordinationPair<f64>;
