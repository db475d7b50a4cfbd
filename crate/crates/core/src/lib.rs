//! Per-instance algorithm selection that scores (problem, algorithm) pairs
//! from problem features and token embeddings of each algorithm's code.

pub mod aslib_io;
pub mod autodiff;
pub mod bound;
pub mod checkpoint;
pub mod embedding_store;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod training;
