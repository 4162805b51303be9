//! Limited-angle fan-beam tomography reconstruction toolkit.
//!
//! The crate covers the full desk-scale experiment loop for constrained
//! primal-dual reconstruction from a short fan-beam arc:
//!
//! - [`geometry`]: scan description and the sparse ray/pixel projection
//!   operator with an exact adjoint,
//! - [`phantom`]: reproducible digital breast slice (thresholded power-law
//!   noise plus microcalcification specks),
//! - [`filters`]: square-root Hanning detector-frequency responses and
//!   their application along sinogram rows,
//! - [`diffops`]: forward-difference operators and the directional-TV value,
//! - [`solver`]: the PDHG engine in single-channel and split-fidelity
//!   two-channel modes,
//! - [`metrics`]: RMSE, mode-gain spectra, and convergence diagnostics,
//! - [`io`]: flat `f32` binaries with structured-text sidecars and the CSV
//!   emitters used by the experiment harness.
//!
//! Everything is deterministic: random draws go through named, seeded
//! generators, and parallel sections only produce order-independent
//! results, so repeated runs are bit-identical.

pub mod diffops;
pub mod error;
pub mod filters;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod solver;

pub use error::{Error, Result};
