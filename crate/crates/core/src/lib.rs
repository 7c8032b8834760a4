//! Spin needlets on the sphere: spin spherical harmonics, cubature grids,
//! needlet transforms, needlet power spectrum estimators and a Monte Carlo
//! harness for their limiting distributions.
//!
//! Numerical modules are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the precision. [`mc`] works in `f64`.

pub mod error;
pub mod estimators;
pub mod field;
pub mod grid;
pub mod harmonic;
pub mod mc;
pub mod rng;
pub mod scalar;
pub mod specfun;
pub mod sum;
pub mod transform;
pub mod window;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Window = window::NeedletWindow<f64>;
pub type Grid = grid::CubatureGrid<f64>;
pub type Mask = grid::SkyMask<f64>;
pub type Alm = field::SpinAlm<f64>;
pub type Coefficients = transform::NeedletCoefficients<f64>;

pub type WindowF32 = window::NeedletWindow<f32>;
pub type GridF32 = grid::CubatureGrid<f32>;
pub type MaskF32 = grid::SkyMask<f32>;
pub type AlmF32 = field::SpinAlm<f32>;
pub type CoefficientsF32 = transform::NeedletCoefficients<f32>;

#[cfg(test)]
#[path = "../tests/common/oracles.rs"]
#[allow(dead_code)]
mod oracles;
