pub mod augment;
pub mod commands;
pub mod config;
pub mod data;
pub mod run;
pub mod train;

pub use augment::{random_erase, ErasingConfig};
pub use commands::*;
pub use config::*;
pub use data::*;
pub use run::RunDir;
pub use train::*;
