pub mod bbox;
pub mod cli;
pub mod config;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io_util;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod prompter;
pub mod settings;
pub mod trainer;

pub use bbox::BBox;
pub use config::{ModelConfig, PrompterToggles};
pub use error::{Error, Result};
