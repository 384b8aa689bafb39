//! Proximity-subgraph variational autoencoder for implicit-feedback
//! recommendation.

pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod objective;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Checkpoint64 = checkpoint::Checkpoint<f64>;
pub type Trainer64<'a> = trainer::Trainer<'a, f64>;
