pub mod data;
pub mod embed;
pub mod error;
pub mod model;
pub mod params;
pub mod tensor;
pub mod tools;
pub mod train;

pub use error::{Error, Result};
