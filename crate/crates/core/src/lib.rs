//! Contracting and Lipschitz-bounded dynamical models.
//!
//! The crate covers four nested model families, from stable linear systems up
//! to recurrent equilibrium networks, together with:
//!
//! * symmetric-matrix certificates (`certkit`) used to verify contraction,
//!   well-posedness and incremental gain bounds,
//! * direct parameterizations mapping unconstrained parameter vectors onto
//!   certified model sets,
//! * simulation-error fitting with hand-written reverse-mode gradients
//!   (`simfit`),
//! * empirical falsification of certificates (`probe`).
//!
//! Everything here is `no_std` with `alloc`; file formats and the command-line
//! tool live in the companion `contrax` crate.

#![no_std]
#![allow(clippy::many_single_char_names, clippy::too_many_arguments, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod activation;
pub mod certkit;
pub mod eqnet;
pub mod error;
pub mod lti;
pub mod probe;
pub mod ren;
pub mod rnn;
pub mod sample;
pub mod simfit;

mod adjoint;
mod solver;

pub use activation::Activation;
pub use certkit::{DirectFactor, SkewSymmetric, SymCheckReport};
pub use eqnet::{EquilibriumNetwork, FeedforwardSpec, LbenParams};
pub use error::{Error, Result};
pub use lti::{ExplicitLti, ImplicitLti};
pub use ren::{Ren, RenDirectParams};
pub use rnn::RobustRnn;
pub use simfit::{Dynamics, ModelDims, TimeSeriesDataset};
pub use solver::{Equilibrium, SolverOptions};

/// Dense matrix type used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense column vector type used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
