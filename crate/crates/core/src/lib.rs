//! Multi-choice preferential Bayesian optimization.
//!
//! The crate recovers a hidden optimum from N-of-K preference feedback. A
//! Gaussian-process prior over a latent utility is conditioned on choice
//! observations through a Laplace approximation ([`preference`]), candidate
//! batches come from the balanced-subspace acquisition ([`acquisition`]), and
//! [`session`] drives the propose / observe / refit loop. [`warp`] and
//! [`oracles`] provide the warp-matching task and simulated users used by the
//! benchmark harness in [`bench`].

pub mod acquisition;
pub mod bench;
pub mod error;
pub mod gp;
mod linalg;
pub mod oracles;
pub mod preference;
pub mod session;
pub mod sobol;
pub mod stats;
pub mod warp;

pub use error::{Error, Result};
