//! Connection-geometric construction of maximum-entropy densities.
//!
//! Constraint functionals `J` are parsed from text ([`expr`]), sampled on
//! rectangular grids ([`grid`]) and turned into the one-form `λ dJ`
//! ([`geometry`]). Transporting along that form ([`transport`]) rebuilds
//! `exp(-λJ)/Z`, which is also what the dual fit ([`maxent`]) and the
//! Fokker–Planck and Langevin dynamics ([`dynamics`]) converge to.

// `!(x <= tol)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// explicit `z == 0.0` guards read better than float literal patterns
#![allow(clippy::redundant_guards)]

pub mod cli;
pub mod density;
pub mod dynamics;
pub mod expr;
pub mod geometry;
pub mod grid;
pub mod json;
pub mod maxent;
pub mod transport;
