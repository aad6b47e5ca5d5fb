//! ψ-fractional calculus toolkit: ψ-Riemann–Liouville integrals, ψ-Caputo
//! derivatives, a Picard solver for the implicit integro-differential
//! problem
//!
//! ```text
//! N^{α,ψ} ϑ(z) = F(z, ϑ(z), I^{α,ψ} H(z, τ, N^{α,ψ} ϑ(τ))),   ϑ(0) = ϑ₀,
//! ```
//!
//! and the contraction, a-priori and Ulam-stability bounds that go with it.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod expr;
pub mod frac_ops;
pub mod psi;
pub mod solver;
pub mod special;

pub use error::{Error, Result};
pub use frac_ops::{ProductRule, SampledFunction};
pub use psi::{FractionalOrder, Grid, PsiFunction, Spacing};
