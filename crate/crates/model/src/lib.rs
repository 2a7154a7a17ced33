//! Query-propagation multi-object tracker: network, label assignment,
//! losses, training and inference.

pub mod backbone;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod loss;
pub mod matching;
pub mod model;
pub mod nn;
pub mod queries;
pub mod tan;
pub mod train;
pub mod tracker;

pub use config::{LossConfig, ModelConfig, StageConfig, TrackerConfig, TrainConfig};
pub use error::{ModelError, Result};
pub use model::Model;
