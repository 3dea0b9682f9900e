//! Training and evaluation toolkit for binary parking-space occupancy
//! classification that works on deliberately degraded, low-resolution
//! images.
//!
//! The pipeline is built from scratch: bilinear resampling and a two-step
//! shrink/enlarge degradation ([`imaging`]), dataset manifests and
//! deterministic batch assembly ([`dataset`]), a compact two-conv
//! classifier with hand-written forward and backward passes ([`nn`]), an
//! AdamW training loop with checkpointing ([`train`]), and accuracy/ROC
//! evaluation with resolution sweeps ([`eval`]). Every random choice is
//! derived from explicit seeds, so identical invocations produce identical
//! results down to the last bit.

pub mod dataset;
pub mod eval;
pub mod imaging;
pub mod nn;
pub mod rng;
pub mod train;
