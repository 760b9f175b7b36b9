//! Deterministic federated-learning simulator with class-wise Shapley client
//! selection and a set of baseline selection strategies.

pub mod axioms;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod nn;
pub mod runner;
pub mod selection;
pub mod shapley;

pub use error::{Error, Result};
