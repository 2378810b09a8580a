//! Language-conditioned image editing model with recurrent attentive fusion.

pub mod color;
pub mod config;
pub mod decoder;
pub mod discriminator;
pub mod encoders;
pub mod estimators;
pub mod fusion;
pub mod init;
pub mod losses;
pub mod lstm;
pub mod model;

pub use config::*;
pub use model::{Model, Forward};
