//! Invariant signatures from group-transformed template banks: simple
//! responses against stored orbits, pooled into histogram, moment or max
//! statistics, plus layered architectures and brute-force oracles.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod group;
pub mod hierarchy;
pub mod hw;
pub mod image;
pub mod oracle;
pub mod rng;
pub mod template;

pub use error::{Error, Result};
pub use group::{warp, window_shift, GroupSpec, PoolingWindow, SmoothWarp};
pub use hierarchy::{FeatureBank, FeatureMap, LayerBank, LayerConfig};
pub use hw::{signature, signature_distance, PoolingSpec, Signature};
pub use image::{dot, normalize, Image};
pub use rng::{derive_seed, SplitMix64};
pub use template::{GaborParams, TemplateBank};
