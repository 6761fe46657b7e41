//! Reinforcement learning with verifiable rewards at desk scale.
//!
//! The crate bundles the pieces needed to run group relative policy
//! optimization (GRPO) against rule-checked rewards on multiple-choice data:
//!
//! - [`grpo`]: relative advantages, the clipped surrogate, the analytic update
//!   and the cosine learning-rate schedule.
//! - [`policy`]: a linear-softmax policy over composite (answer, format)
//!   actions and the renderer that turns actions into tagged text.
//! - [`rewards`]: the tag parser and the format, accuracy and XML-count rewards.
//! - [`filter`]: easy/hard classification and hard-heavy training-set selection.
//! - [`client`]: a chat-completions client with retries and an on-disk cache.
//! - [`eval`]: accuracy evaluation and comparison reports.
//! - [`train`]: the training loop tying everything together.

pub mod client;
pub mod data;
pub mod error;
pub mod eval;
pub mod filter;
pub mod grpo;
pub mod parallel;
pub mod policy;
pub mod prompt;
pub mod rewards;
pub mod synthetic;
pub mod train;

pub use data::McqItem;
pub use error::{Error, Result};
pub use grpo::{ActionGroup, AdvantageVector, GrpoConfig, StepDiagnostics};
pub use policy::{CompositeAction, FormatVariant, PolicyParams, StateFeatures};
pub use rewards::{ParsedResponse, RewardBreakdown, RewardWeights};
