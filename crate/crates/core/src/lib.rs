//! Numeric core for residual-based anomaly classification with a selective
//! state-space (Mamba-style) autoencoder.
//!
//! The crate is `no_std` (it needs `alloc`) and contains everything that is
//! pure computation:
//!
//! * [`tensor`] and [`ops`]: dense row-major `f64` arrays and their kernels,
//! * [`autograd`]: a tape-based reverse-mode differentiation engine,
//! * [`optim`] (Adam),
//! * [`scan`]: the selective scan, as a sequential recurrence and as a
//!   work-efficient (Blelloch) parallel prefix scan,
//! * [`tsmamba`]: the 2D scan over three pixel orientations, the TSMamba
//!   block and the encoder stack,
//! * [`autoencoder`] and [`classifier`]: the two networks of the pipeline,
//! * [`metrics`]: confusion matrices and precision / recall / F1 / accuracy,
//! * [`attention`]: a quadratic attention baseline used for scaling runs.
//!
//! IO, file formats, training orchestration and the command line live in the
//! `tsmamba` crate.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod attention;
pub mod autoencoder;
pub mod autograd;
pub mod classifier;
pub mod checks;
mod error;
pub mod gradcheck;
pub mod metrics;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scan;
pub mod tensor;
pub mod tsmamba;

pub use crate::autograd::{Gradients, Tape, Var};
pub use crate::error::{Error, Result};
pub use crate::params::{ParamId, ParamStore};
pub use crate::tensor::Tensor;

/// Deterministic generator used for every random initialization.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
