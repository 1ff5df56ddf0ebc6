//! High-precision computations around the modular j-function.
//!
//! The crate provides: arbitrary-precision complex arithmetic with integer
//! relation detection, the half-plane with its rational matrix action,
//! q-expansion evaluation of j and its derivatives, classical modular
//! polynomials, a formal ring of j-polynomials with Khovanskii systems and a
//! certifying Newton solver, and a predimension calculus on finite
//! configurations of half-plane points.

pub mod closure_geometry;
pub mod error;
pub mod halfplane;
pub mod jpolynomial;
pub mod khovanskii;
pub mod modular_forms;
pub mod modular_polynomials;
pub mod numerics;

pub use error::{Error, Result};
