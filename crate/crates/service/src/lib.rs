pub mod api;
pub mod cli;
pub mod error;
pub mod jobs;
pub mod pipeline;
pub mod store;

pub use error::{Result, ServiceError};
