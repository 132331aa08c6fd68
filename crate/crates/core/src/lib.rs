//! QuIRK: Kolmogorov-Arnold networks whose edge activations are single-qubit
//! data re-uploading circuits.
//!
//! - [`qsim`]: 2×2 complex statevector kernel plus a small multi-qubit register.
//! - [`dr`]: circuit activations with exact adjoint gradients.
//! - [`network`]: layers of summed circuit edges, rescale maps, dense head.
//! - [`train`]: Adam training, early stopping and edge pruning.
//! - [`data`]: Feynman-equation registry, synthetic datasets, CSV IO.
//! - [`interpret`]: polynomial fits of learned edges and the surrogate model.
//! - [`bspline`]: cubic B-spline baseline for univariate comparisons.

pub mod bspline;
pub mod data;
pub mod dr;
pub mod error;
pub mod interpret;
pub mod network;
pub mod plot;
pub mod qsim;
pub mod train;

pub use error::{QuirkError, Result};
