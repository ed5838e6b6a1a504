//! Tag-aware recommendation with hybrid deep-semantic matrix factorization.
//!
//! Pipeline: [`folksonomy`] ingestion and matrices, a tied-weight
//! [`autoencoder`] over tag profiles, the hybrid [`objective`] with analytic
//! gradients, SGD [`train`]ing (plus a plain matrix-factorization baseline),
//! and top-k [`eval`]uation.

pub mod autoencoder;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod folksonomy;
pub mod objective;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
