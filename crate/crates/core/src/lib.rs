//! Keyframe-driven retrieval, parallel speculative drafting and two-stage
//! verification for knowledge-intensive video question answering.

pub mod draft;
pub mod error;
pub mod keyframe;
pub mod pipeline;
pub mod protocol;
pub mod retrieval;
pub mod schedule;
pub mod templates;
pub mod verifier;

pub use error::{Error, ProtocolError, Result};
