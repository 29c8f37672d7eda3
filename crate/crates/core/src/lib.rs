//! Parameter-server training: asynchronous SGD, synchronous SGD with backup
//! workers, a deterministic discrete-event simulator, a threaded runtime, and
//! the staleness/straggler analyses built on their traces.

pub mod error;
pub mod harness;
pub mod optim;
pub mod protocol;
pub mod rng;
pub mod runtime;
pub mod sim;
pub mod staleness;
pub mod straggler;
pub mod tensor;
pub mod trace;

pub use error::{Error, Result};
