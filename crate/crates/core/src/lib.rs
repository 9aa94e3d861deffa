//! Training, tuning, ensembling and benchmarking of small convolutional
//! classifiers on CPU.
//!
//! The crate is organized around a small dense-tensor autodiff core
//! ([`tensor`]), a declarative model zoo of four embedded architecture
//! families ([`models`]), dataset ingestion and fold management ([`data`]),
//! a training engine with per-epoch checkpoints ([`train`]), Hyperband
//! hyperparameter search ([`hpo`]), voting ensembles ([`ensemble`]), a CPU
//! latency/memory benchmark harness ([`bench`]) and an end-to-end pipeline
//! driver ([`pipeline`]).

pub mod bench;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod hpo;
pub mod models;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Elem, Tensor};
