pub mod cli;
pub mod datapipe;
pub mod error;
pub mod evalmetrics;
pub mod model;
pub mod numcore;
pub mod objectives;
pub mod textcodec;
pub mod train;
pub mod unilabel;

pub use error::{Error, Result};
