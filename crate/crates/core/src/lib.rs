pub mod autoencoder;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod matrix;
pub mod mds;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod stitch;

pub use error::{GraeError, Result};
pub use matrix::DenseMatrix;
