pub mod datagen;
mod error;
pub mod joins;
pub mod mem;
pub mod microbench;
pub mod queries;
pub mod scans;
pub mod sync;
pub mod team;
pub mod timing;

pub use error::{Error, Result};
