//! Group-relative policy optimization with diversity rewards.
//!
//! The crate holds everything that does not need a network: box geometry and
//! rewards, detection metrics, the entropy/diversity machinery, the GRPO loss
//! with exact gradients, and the synthetic scene environment that stands in
//! for images and a multimodal policy.

pub mod checkpoint;
pub mod diversity;
pub mod env;
mod error;
pub mod exec;
pub mod geometry;
pub mod grpo;
pub mod metrics;
pub mod policy;
pub mod protocol;

pub use error::{CoreError, Result};
pub use exec::Exec;
pub use geometry::{BBox, ClassId, LabeledBox, RewardBreakdown};
