pub mod analysis;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod labelling;
pub mod models;
pub mod nn;
pub mod rng;
pub mod selftest;
pub mod tensorizer;

pub use error::{Error, Result};
