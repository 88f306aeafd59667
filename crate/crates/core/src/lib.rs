//! Guaranteed-time controller synthesis for polytopic systems using
//! simplicial piecewise-quadratic certificates.

#[cfg(feature = "clarabel")]
pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod pwq;
pub mod relaxation;
pub mod simulation;
pub mod synthesis;
pub mod systems;

pub use error::{Error, Result};
