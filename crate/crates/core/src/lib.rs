pub mod animation;
pub mod binding;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod loss;
pub mod magc;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
