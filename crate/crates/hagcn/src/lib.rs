//! High-order adaptive graph convolution.
//!
//! The building block is the clipped adjacency power `min(A^k + I, 1)`, which
//! marks node pairs connected by a walk of length exactly k (plus self-links).
//! Graph convolution layers mask a trainable weight matrix with that pattern,
//! optionally rescale it with a data-dependent sigmoid gate, and concatenate
//! one block per order. Everything trains on a small reverse-mode tape over
//! dense row-major `f64` matrices.
//!
//! Modules:
//! - [`graph`]: graph types, adjacency powers, padding, walk oracles
//! - [`tensor`]: tensors, parameters, the autodiff tape, gradient checking
//! - [`layers`]: convolution operators and adaptive gates
//! - [`arch`]: architecture string parsing (`"gcn_{1,2}-fc64-ReLU-..."`)
//! - [`model`]: layer stacks, training steps, evaluation, checkpoints
//! - [`optim`]: SGD and Adam
//! - [`pipelines`]: node classification, graph regression, graph VAE
//! - [`data`]: dataset JSON files and synthetic generators
//! - [`export`]: CSV export of metrics, weights, and gate values
//! - [`gradsuite`]: the standard finite-difference check suite

pub mod arch;
pub mod data;
pub mod export;
pub mod gradsuite;
pub mod graph;
pub mod layers;
pub mod model;
pub mod optim;
pub mod pipelines;
pub mod rng;
pub mod tensor;
