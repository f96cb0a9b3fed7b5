//! Resolvent convergence for Schrödinger operators on metric graphs whose
//! compact core shrinks to a point.
//!
//! The crate covers graph descriptions and scaling ([`graph`]), a P1 finite
//! element discretization ([`fem`]), the auxiliary core Hamiltonian and the
//! classification of its zero modes ([`spectral`]), Kreĭn-type resolvent
//! formulas ([`krein`]) and ε-sweeps with rate fitting ([`limit`]). Graph
//! documents are read and written by [`io`].

// Index loops mirror the matrix formulas; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fem;
pub mod graph;
pub mod io;
pub mod krein;
pub mod limit;
pub mod linalg;
pub mod spectral;
pub mod systems;

pub use error::{Error, Result};
