//! Discrete minimizing movements for a perimeter plus nonlocal interaction
//! energy under the Wasserstein metric, on uniform 2-D grids.

pub mod config;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod fields;
pub mod grid;
pub mod io;
pub mod jko;
pub mod ledger;
pub mod reference;
pub mod transport;

pub use error::{Error, Result};
pub use grid::{
    check_equal_mass, mass, second_moment, symmetric_difference_volume, threshold_with_mass,
    CellBox, DensityField, FieldPair, Grid2D,
};
