//! Numerical laboratory for Lorentz-space Wente estimates on degenerating
//! annuli and for bubble-tree energy quantization of sphere-valued maps.

pub mod error;
pub mod harmonic_annulus;
pub mod lorentz;
pub mod numerics;
pub mod polar_grid;
pub mod quantization;
pub mod random;
pub mod wente;

pub use error::{Error, Result};
