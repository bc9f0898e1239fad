//! Demonstration pre-training for asynchronous actor-critic agents on small
//! deterministic pixel games.

pub mod a3c;
pub mod demo;
pub mod env;
pub mod error;
pub mod eval;
pub mod gradcam;
pub mod network;
pub mod numeric;
pub mod pretrain;
pub mod proxy;

pub use error::{Error, Result};
