//! Periodic data, holonomies and transfer maps for linear cocycles over hyperbolic systems.

pub mod base;
pub mod cocycle;
pub mod error;
pub mod holonomy;
pub mod linalg;
pub mod optimize;
pub mod rigidity;
pub mod scenario;
pub mod spectrum;
pub mod transfer;

pub use error::{Error, Result};
