//! Spectral contrastive domain adaptation for graph classification.
//!
//! Graphs are split into low- and high-frequency node signals with the
//! eigenbasis of their normalized Laplacian. Two GIN streams embed the
//! filtered signals, and training combines source cross-entropy with a
//! frequency-split contrastive term and a cosine-kernel MMD term.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: immutable graphs, Laplacians, structural profiles
//! - [`dataset`]: TUDataset parsing, quantile domain splits, split manifests
//! - [`eigen`] and [`spectral`]: symmetric eigensolver, graph Fourier transform, band filters
//! - [`autodiff`]: a small dense reverse-mode tape
//! - [`nn`]: the dual-stream GIN encoder, classifier, Adam, checkpoints
//! - [`losses`]: frequency kernel, MMD, contrastive and alignment losses
//! - [`pairing`]: positive-pair mining and negative selection
//! - [`experiment`]: training, evaluation, transfer matrices, sweeps, analysis

pub mod autodiff;
pub mod dataset;
pub mod eigen;
mod error;
pub mod experiment;
pub mod graph;
pub mod losses;
pub mod matrix;
pub mod nn;
pub mod pairing;
pub mod spectral;

pub use error::{Error, Result};
pub use graph::Graph;
pub use matrix::Matrix;
