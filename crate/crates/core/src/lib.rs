pub mod bench;
pub mod error;
pub mod io;
pub mod knockoffs;
pub mod linalg;
pub mod model;
pub mod procedures;
pub mod robustness;
pub mod rng;
pub mod samplers;
pub mod statistics;

pub use error::{Error, Result};
