//! End-to-end toolkit for studying iris morphing attacks on synthetic
//! periocular data.
//!
//! The pipeline runs: synthetic eye generation ([`synthgen`]) → threshold
//! segmentation with least-squares circle fits ([`segmentation`]) →
//! rubber-sheet normalization ([`normalization`]) → log-Gabor iris codes
//! and shift-compensated Hamming comparison ([`codec`]). Morphs are built
//! from landmark-guided piecewise-affine warps ([`morphgen`]) over pairs
//! chosen by [`pairsel`], scored by the vulnerability metrics in
//! [`metrics`], and challenged by the single-image morph detector in
//! [`mad`]. The [`harness`] module ties the stages into a reproducible,
//! file-backed batch experiment; the `morphiris` binary exposes it on the
//! command line.
//!
//! Every random decision derives from one experiment seed through named
//! sub-streams ([`rng`]), so reruns are byte-identical.

pub mod codec;
pub mod error;
pub mod harness;
pub mod imgcore;
pub mod mad;
pub mod metrics;
pub mod morphgen;
pub mod normalization;
pub mod pairsel;
pub mod rng;
pub mod segmentation;
pub mod synthgen;

pub use error::{Error, Result};
