//! Berezin–Simon coherent-state quantization at desk scale: exact matrix semigroups on
//! truncated Hilbert spaces and discretized line-bundle sections, cross-checked against
//! Monte Carlo Feynman–Kac estimators with stochastic holonomy.

pub mod bs_quant;
pub mod coherent_family;
pub mod discrete_bundle;
pub mod error;
pub mod operator_core;
pub mod path_mc;
pub mod semigroup_limit;

pub use error::{BsError, Result};
pub use operator_core::{C64, ComplexMatrix, Spectrum};
