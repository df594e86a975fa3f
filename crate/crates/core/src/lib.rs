//! Consensus certificates for networks of identical agents with polynomial
//! dynamics coupled through a symmetric pattern matrix.

pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod pattern;
pub mod pipeline;
pub mod polybasis;
pub mod sdp;

pub use error::{Error, Result};
