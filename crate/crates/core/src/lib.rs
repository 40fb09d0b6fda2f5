//! Spatial clustering and classification on weighted K-nearest-neighbor graphs.
//!
//! The pipeline turns a vectorized dataset into a weighted undirected KNN
//! graph, trains a CNN/GNN network under a soft modularity objective, and
//! exposes the trained network as a classifier, a clusterer, and a reusable
//! embedding transform.
//!
//! Module map:
//! - [`autodiff`]: dense f64 tensors with reverse-mode differentiation and
//!   the kernels (matmul, sparse product, convolution, pooling, batch norm,
//!   softmax) the models are built from.
//! - [`graph`]: exact brute-force KNN construction, inverse-distance
//!   weighting, symmetrization, GCN normalization, and graph persistence.
//! - [`sampler`]: neighborhood-sampled minibatching with local reindexing.
//! - [`nn`]: the CNN encoder, GCN/GIN convolutions, and the layer stack.
//! - [`dmon`]: soft cluster assignment and the modularity / collapse /
//!   orthogonality / balance losses.
//! - [`train`]: Adam, plateau scheduling, the supervised and unsupervised
//!   loops, graph-augmented prediction, embedding export, checkpoints.
//! - [`metrics`]: NMI, ARI, Hungarian-matched clustering accuracy, top-1.
//! - [`kmeans`]: the k-means baseline.
//! - [`io`]: matrix container, IDX and CSV ingestion.

pub mod autodiff;
pub mod config;
pub mod dmon;
pub mod error;
pub mod graph;
pub mod io;
pub mod kmeans;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod train;

pub use error::{CoreError, Result};
