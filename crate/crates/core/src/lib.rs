//! Grounded generative recommendation over semantic-ID prefixes.
//!
//! A generator emits 3-layer SID prefixes from a routed user context; the
//! matcher grounds them against an immutable pool snapshot, so every
//! recommendation is an article that exists in the pool being served.

pub mod codebook;
pub mod dualtrack;
pub mod error;
pub mod eval;
pub mod generator;
pub mod jsonl;
pub mod matcher;
pub mod padr;
pub mod pool;
pub mod ranking;
pub mod sid;

pub use error::{Error, Result};
pub use sid::{Sid, SidPrefix, LAYER_SIZES};
