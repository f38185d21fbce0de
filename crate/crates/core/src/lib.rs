pub mod channel;
pub mod error;
pub mod link;
pub mod robots;
pub mod sensing;
pub mod signals;
pub mod sim;
pub mod sync;

pub use error::{Error, Result};
