//! Desk-scale laboratory for non-autoregressive sequence models trained
//! against proxy targets and proxy inputs.

pub mod data;
pub mod decode;
pub mod error;
pub mod metrics;
pub mod model;
pub mod proxy_input;
pub mod proxy_target;
pub mod recipes;
pub mod train;

pub use error::{NatError, Result};
