pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod infer;
pub mod model;
pub mod predictor;
pub mod render;
pub mod scene;
pub mod train;
