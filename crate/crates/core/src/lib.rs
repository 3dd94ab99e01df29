pub mod data;
pub mod error;
pub mod layers;
pub mod losses;
pub mod models;
pub mod retrieval;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
