pub mod dataset;
pub mod error;
pub mod estimation;
pub mod fixtures;
pub mod mathcore;
pub mod model;
pub mod simulation;

pub use error::{Error, Result};
