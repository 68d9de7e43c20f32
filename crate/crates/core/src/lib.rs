//! Multi-exit hashing network for re-identification retrieval: a four-stage
//! encoder emitting binary codes at every stage, the training objective,
//! exit policies, a packed Hamming index and budgeted evaluation.

// NaN-rejecting checks read as `!(x > 0.0)`; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod encoder;
pub mod error;
pub mod eval;
pub mod hamming;
pub mod losses;
pub mod numerics;
pub mod pipeline;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
