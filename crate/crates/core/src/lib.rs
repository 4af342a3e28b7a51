pub mod attention;
pub mod cells;
pub mod config;
pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod lm;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod search;
pub mod synth;
pub mod train;
pub(crate) mod params;
pub mod pipeline;
pub mod vocab;

pub use error::{Error, Result};
pub use numerics::{Tape, Tensor, Var};
pub use params::Init;
