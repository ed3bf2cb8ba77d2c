pub mod baselines;
pub mod cli;
pub mod cnn;
pub mod datagen;
pub mod error;
pub mod evalbench;
pub mod formats;
pub mod models;
pub mod numerics;
pub mod traffic_image;
pub mod training;

pub use error::{Error, Result};
