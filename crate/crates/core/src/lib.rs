//! Building blocks for a multi-scale traffic-sign detector study: a small dense
//! tensor engine, an attention/enhancement feature pyramid neck, CIoU box
//! regression, learned augmentation policies with a PPO-trained controller, and
//! detection metrics (mAP, size-bucketed AP, log-average miss rate, FPS).

pub mod augment;
pub mod boxes;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod neck;
pub mod search;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
