pub mod bounds;
pub mod error;
pub mod example;
pub mod linalg;
pub mod quantizer;
pub mod simulate;
pub mod switching;
pub mod synthesis;
pub mod system;

pub use error::{Error, Result};
