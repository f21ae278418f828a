//! Disentangling reversing network for deepfake face traceability.
//!
//! Given a fake face, an identity encoder and an attribute encoder split its
//! features, the identity path is trained to recover the original identity,
//! and a shared decoder renders the speculated original ("traced") face.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod identity;
pub mod imageio;
pub mod layers;
pub mod losses;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorKind, Result};
