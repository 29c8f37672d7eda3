//! The parameter-server state machines, independent of how time passes.
//!
//! Workers turn a [`ReadSnapshot`] into a [`GradientMessage`]; each shard is a
//! [`ShardState`] that applies gradients either one at a time (asynchronous)
//! or as a mean over a [`SyncCollector`] batch (synchronous). The simulator
//! and the threaded runtime both drive these same types.

mod collect;
mod message;
pub(crate) mod shard;
mod worker;

pub use collect::{DeadlineOutcome, Offer, SyncCollector, TimeoutCollector, TimeoutPolicy};
pub use message::{GradientMessage, ReadSnapshot};
pub use shard::{AsyncApply, ShardState};
pub use worker::{async_worker_step, sync_worker_step};
