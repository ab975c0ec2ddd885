//! Two-particle vertex-repelling random walk on the complete graph, together
//! with the stochastic-approximation machinery used to study it: the
//! discrete chain and its Robbins–Monro decomposition, the interpolated
//! continuous-time path, the mean-field ODE and its Lyapunov functional, the
//! linearization spectra at the uniform point, and brute-force numeric
//! verification of the supporting inequalities.
//!
//! The model: particles `X` and `Y` hop on the vertices `{1..d}` of a
//! complete graph. Each particle prefers vertices the *other* particle has
//! visited rarely: the jump law of `X` is the normalized weight
//! `w(y_i)^(-alpha)` of `Y`'s occupation measure `y`, with the weight floored
//! at `delta` so it stays bounded. Strong reinforcement (`alpha` large)
//! drives the two occupation measures onto nearly disjoint supports.

// `!(x > 0.0)` rejects NaN where `x <= 0.0` would let it through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// multi-array numeric stencils read clearer with explicit indices
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod flow;
pub mod interp;
pub mod model;
pub mod oracles;
pub mod spectra;
pub mod walk;

pub use error::{Error, Result};
pub use model::{Params, ProductPoint, SimplexPoint};
