pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod eval;
pub mod model;
pub mod nn;
pub mod relq;
pub mod scene;
pub mod segment;
pub mod synth;
pub mod text;
pub mod train;
