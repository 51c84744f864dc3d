//! Two-band subband decomposition front-end for small convolutional
//! networks trained with stochastically rounded fixed-point weights.
//!
//! Images are split into a full-resolution Laplacian band (edges) and a
//! half-resolution Gaussian band (texture). One LeNet-style network is
//! trained per band and their softmax outputs are averaged at inference.
//!
//! - [`subband`]: Burt-pyramid decomposition and exact reconstruction.
//! - [`qnum`]: fixed-point formats, stochastic rounding and schedules.
//! - [`cnn`]: the network, SGD training and gradient checking.
//! - [`fusion`]: equal-weight averaging of two class distributions.
//! - [`data`]: MNIST / CIFAR-10 loaders and band datasets.
//! - [`harness`]: experiments, sweeps, metrics and plot data.

pub mod cnn;
pub mod data;
pub mod fusion;
pub mod qnum;
pub mod subband;
pub mod harness;
