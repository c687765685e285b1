// `!(x > 0.0)` is used on purpose so NaN lands in the error branch
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod clt;
pub mod density;
pub mod error;
pub mod fisher;
pub mod inference;
pub mod io;
pub mod measures;
pub mod montecarlo;
pub mod stats;
pub mod stieltjes;

pub use error::{Error, Result, Stage};
pub use measures::{AspectRatios, MomentParams, SpectralFunctional, SpectralMeasure};
pub use stieltjes::{SolverConfig, StieltjesTriple};
