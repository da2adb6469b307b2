//! Spectral free-wave engine for the linear wave equation on a periodic box, with
//! wave-packet decompositions, null forms, Poincare vector fields and a measurement
//! harness for bilinear estimates.

pub mod bump;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod nullforms;
pub mod packets;
pub mod spectral;
pub mod vectorfields;
pub mod waves;

pub use error::{Error, Result};
pub use grid::{Field, Grid, Region, Repr, C64};
pub use waves::{FreeWave, Sign, WaveState};
