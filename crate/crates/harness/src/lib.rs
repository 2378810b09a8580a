//! Configuration, training, evaluation and reporting for fuselang runs.

pub mod compare;
pub mod config;
pub mod data;
pub mod eval;
pub mod inspect;
pub mod optim;
pub mod train;

pub use config::RunConfig;
