//! Systemic redundancy in reliable multi-channel linear systems.

// Negated float comparisons are the NaN-rejecting form; index loops mirror
// the matrix algebra they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod grid;
pub mod info;
pub mod linalg;
pub mod liouville;
pub mod redundancy;
pub mod reliable;
pub mod scalar;
pub mod stochastic;
pub mod system;

pub use error::{Error, Result};
pub use redundancy::{AvgNormalization, Method};
pub use system::FailureMode;

/// `f64` instantiations of the generic types.
pub type Mat = linalg::Matrix<f64>;
pub type System = system::MultiChannelSystem<f64>;
pub type Gains = system::GainSet<f64>;
pub type Diffusion = system::DiffusionSpec<f64>;
pub type Gaussian = liouville::GaussianDensity<f64>;
pub type Density = liouville::GeneralDensity<f64>;
pub type Grid = grid::GridSpec<f64>;
pub type GridPdf = grid::GridDensity<f64>;
pub type Reliability = reliable::ReliabilityReport<f64>;
pub type Report = redundancy::RedundancyReport<f64>;
pub type Sweep = redundancy::SweepTable<f64>;
