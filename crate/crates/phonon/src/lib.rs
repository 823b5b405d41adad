//! Numerical laboratory for the four-wave kinetic equation of the FPUT-beta
//! chain: the resonant manifold, the collision operator, its linearization
//! around Rayleigh-Jeans spectra, and time evolution.

pub mod cli;
pub mod collision;
pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod linearized;
pub mod manifold;
pub mod quadrature;

pub use collision::{Field, Grid, Interp};
pub use error::{PhononError, Result};
pub use linearized::{LinOperator, RjParams};
