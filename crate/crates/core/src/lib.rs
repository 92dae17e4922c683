//! Weakly-supervised multiple-instance regression of slide-level tumor
//! percentage.
//!
//! A slide is a [`Bag`] of patch [`Instance`]s. Each instance is scored
//! independently by a linear head with a sigmoid output, and the instance
//! probabilities are pooled into a bag-level [`TumorPercentage`] by one of
//! four strategies (mean pooling, attention pooling, attention pooling with
//! an instance pseudo-label loss, or thresholded proxy-label segmentation).
//!
//! The crate is `no_std` with `alloc`. File formats, PNG IO and the command
//! line live in the `milreg` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bag;
pub mod error;
pub mod eval;
pub mod math;
pub mod mil;
pub mod optim;
pub mod preprocess;
pub mod raster;
pub mod rng;
pub mod synth;
pub mod targets;
pub mod train;

pub use bag::{make_bag, Bag, Instance, Prediction, TumorPercentage};
pub use error::{Error, Result};
pub use mil::{forward, Method, MilModel};
