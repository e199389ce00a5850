pub mod cit;
pub mod config;

pub use cit::{CitModel, ForwardTrace};
pub use config::{parse_kv, CitConfig};
