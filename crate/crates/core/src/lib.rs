pub mod data;
pub mod dsp;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod model;
pub mod nn;
pub mod selftest;
pub mod training;

pub use error::{Error, Result};
pub use matrix::Matrix;
