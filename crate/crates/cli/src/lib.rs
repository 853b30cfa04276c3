//! Experiment runner for noisy quantum kernel machines.
//!
//! A JSON [`config::ExperimentConfig`] describes the dataset, the chain, the
//! sweep axes (disorder seeds, dephasing rates, regularization grid) and the
//! decoding. Commands prepare the inputs, encode them into cached feature
//! matrices, train and evaluate one-vs-rest classifiers, report kernel
//! diagnostics and trace entanglement during encoding.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod output;
pub mod pipeline;
