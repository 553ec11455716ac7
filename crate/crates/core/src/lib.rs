pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod events;
pub mod model;
pub mod state;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
