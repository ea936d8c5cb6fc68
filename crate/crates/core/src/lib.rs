pub mod bounds;
pub mod error;
pub mod eval;
pub mod models;
pub mod nets;
pub mod rng;
pub mod store;
pub mod tensor_ad;
pub mod train;

pub use error::{Error, Result};
