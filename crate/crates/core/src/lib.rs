//! # sgks
//!
//! Training-free spectral verification on attention-induced token graphs.
//!
//! Each transformer layer's attention is folded into a symmetric token
//! affinity, normalized into a graph Laplacian and eigendecomposed. A
//! per-token signal (residual norms by default) is projected onto the
//! Laplacian eigenbasis, and its energy split into low and high graph
//! frequencies gives the high-frequency energy ratio (HFER). Averaged over
//! an early layer window, HFER drives a three-zone decision
//! (SUPPORTED / CONTRADICTED / UNCERTAIN) and a retrieval kill switch.
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`trace`] | `ActivationTrace`, the SGKT binary format, manifests |
//! | [`synth`] | Deterministic synthetic traces (two-regime generator) |
//! | [`strategy`] | Pluggable head aggregation, Laplacian and cutoff strategies |
//! | [`graph`] | Affinity, normalized Laplacian, eigendecomposition |
//! | [`diag`] | GFT, HFER, spectral entropy, Dirichlet energy |
//! | [`gate`] | Three-zone rule, kill-switch episodes, audit log |
//! | [`calibrate`] | ROC/AUC, Youden threshold, bands, logistic fit, ECE |
//! | [`stats`] | BCa bootstrap, paired permutation, BH-FDR, covariates |
//! | [`sweeps`] | Cutoff / window / variant robustness reports |
//! | [`bench`] | Latency measurement of the diagnostic path |

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod calibrate;
pub mod diag;
pub mod error;
pub mod gate;
pub mod graph;
pub mod stats;
pub mod strategy;
pub mod sweeps;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
