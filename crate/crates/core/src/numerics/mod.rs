//! Arbitrary-precision scalars, the precision context, and integer-relation
//! detection.

mod complex;
mod context;
mod lattice;

pub use complex::{pi, pow2, sqrt_int, two_pi_i, PrecComplex};
pub use context::PrecisionContext;
pub use lattice::{
    integer_relation, integer_relation_complex, lll, min_poly_guess, IntPolynomial, IntRelation,
};
