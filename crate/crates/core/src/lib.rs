//! Energy-weighted flow matching with an adaptively solved scaling factor.
//!
//! The crate trains a conditional vector field on offline action chunks,
//! weighting each sample by `softmax(alpha * R*)` where `R*` is a
//! per-task standardized return and `alpha` is re-solved every step from
//! batch statistics. It also ships a synthetic reaching benchmark, closed-loop
//! evaluation and numerical oracles for the underlying closed forms.

pub mod alpha;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod flow;
pub mod model;
pub mod oracles;
pub mod reward;
pub mod trainer;

pub use error::{Error, Result};
