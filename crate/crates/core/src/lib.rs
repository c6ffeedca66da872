//! Test-time adaptation of image classifiers.
//!
//! A trained classifier is adapted to each incoming test batch by a few SGD
//! steps on the sum of two unsupervised objectives:
//!
//! * a consistency loss: the mean KL divergence between the posteriors of
//!   the clean input, two random augmentations of it, and their average;
//! * the entropy of the clean-input posterior.
//!
//! The crate carries everything needed to exercise this end to end on a
//! laptop: a small autodiff [`engine`], desk-scale [`models`], the
//! RandAugment/AugMix samplers in [`augment`], synthetic distribution shift in
//! [`corruptions`], the objective in [`losses`], the adaptation loop in
//! [`adapt`] and the experiment driver in [`harness`].

pub mod adapt;
pub mod augment;
pub mod corruptions;
pub mod engine;
pub mod error;
pub mod harness;
pub mod losses;
pub mod models;
pub mod rng;

pub use error::{Error, Result};
