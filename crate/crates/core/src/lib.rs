//! Desk-scale laboratory for the training-loop mechanisms behind sparse
//! mixture-of-experts routing, hybrid attention caching, sequence packing,
//! and preference tuning.
//!
//! Everything here runs in seconds on a laptop and is deterministic: all
//! numerics are `f64`, all randomness flows through [`numkit::Rng`] (a fixed,
//! documented generator), and every module ships with oracle tests that pin
//! expected values computed by independent means.

pub mod attention;
pub mod dispatch;
mod error;
pub mod numkit;
pub mod packing;
pub mod preference;
pub mod router;

pub use error::{Error, Result};
