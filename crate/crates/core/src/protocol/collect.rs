use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

use super::message::GradientMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Offer {
    Accepted { ready: bool },
    /// Tagged with an earlier iteration.
    DroppedStale,
    /// Current iteration, but the aggregate is already full.
    DroppedSurplus,
}

impl Offer {
    pub fn is_drop(self) -> bool {
        !matches!(self, Offer::Accepted { .. })
    }
}

fn check_tag(current: u64, msg: &GradientMessage) -> Result<u64> {
    let tag = msg.iter_tag.ok_or_else(|| {
        Error::Protocol(format!("untagged gradient from worker {} in sync mode", msg.worker_id))
    })?;
    if tag > current {
        return Err(Error::Protocol(format!(
            "worker {} sent a gradient for iteration {tag} while the server is at {current}",
            msg.worker_id
        )));
    }
    Ok(tag)
}

/// Gathers the first `target_n` gradients of the current iteration and drops
/// everything else.
#[derive(Debug, Clone)]
pub struct SyncCollector {
    pub target_n: usize,
    pub backup_b: usize,
    current_iter: u64,
    accepted: Vec<GradientMessage>,
    dropped_count: u64,
}

impl SyncCollector {
    pub fn new(target_n: usize, backup_b: usize) -> Result<Self> {
        if target_n == 0 {
            return Err(invalid("sync aggregation needs N >= 1"));
        }
        Ok(Self {
            target_n,
            backup_b,
            current_iter: 0,
            accepted: Vec::with_capacity(target_n),
            dropped_count: 0,
        })
    }

    pub fn current_iter(&self) -> u64 {
        self.current_iter
    }

    pub fn accepted(&self) -> &[GradientMessage] {
        &self.accepted
    }

    pub fn dropped_count(&self) -> u64 {
        self.dropped_count
    }

    pub fn is_ready(&self) -> bool {
        self.accepted.len() == self.target_n
    }

    pub fn offer(&mut self, msg: GradientMessage) -> Result<Offer> {
        let tag = check_tag(self.current_iter, &msg)?;
        if tag < self.current_iter {
            self.dropped_count += 1;
            return Ok(Offer::DroppedStale);
        }
        if self.is_ready() {
            self.dropped_count += 1;
            return Ok(Offer::DroppedSurplus);
        }
        self.accepted.push(msg);
        Ok(Offer::Accepted {
            ready: self.is_ready(),
        })
    }

    /// Hands over the full aggregate and moves to the next iteration.
    pub fn take(&mut self) -> Result<Vec<GradientMessage>> {
        if !self.is_ready() {
            return Err(Error::Protocol(format!(
                "iteration {} has {} of {} gradients",
                self.current_iter,
                self.accepted.len(),
                self.target_n
            )));
        }
        self.current_iter += 1;
        Ok(std::mem::take(&mut self.accepted))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeoutPolicy {
    /// Seconds after the iteration starts.
    pub deadline: f64,
    pub n_min: usize,
    pub max_retries: u32,
}

impl Default for TimeoutPolicy {
    fn default() -> Self {
        Self {
            deadline: 1.0,
            n_min: 1,
            max_retries: 3,
        }
    }
}

impl TimeoutPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.deadline > 0.0 && self.deadline.is_finite()) {
            return Err(invalid("timeout deadline must be positive"));
        }
        if self.n_min == 0 {
            return Err(invalid("timeout n_min must be at least 1"));
        }
        Ok(())
    }

    /// Deadline after `retries` doublings.
    pub fn deadline_after(&self, retries: u32) -> f64 {
        self.deadline * f64::from(1u32 << retries.min(30))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeadlineOutcome {
    Ready,
    /// Too few gradients; keep collecting until the new (doubled) deadline,
    /// measured from the iteration start.
    Retry { deadline: f64 },
    Abort,
}

/// Deadline-based collection: the iteration closes when all `total` workers
/// have reported or when the deadline passes with at least `n_min`.
#[derive(Debug, Clone)]
pub struct TimeoutCollector {
    pub total: usize,
    pub policy: TimeoutPolicy,
    current_iter: u64,
    retries: u32,
    closed: bool,
    accepted: Vec<GradientMessage>,
    dropped_count: u64,
    retry_count: u64,
}

impl TimeoutCollector {
    pub fn new(total: usize, policy: TimeoutPolicy) -> Result<Self> {
        policy.validate()?;
        if total == 0 {
            return Err(invalid("timeout collection needs at least one worker"));
        }
        Ok(Self {
            total,
            policy,
            current_iter: 0,
            retries: 0,
            closed: false,
            accepted: Vec::new(),
            dropped_count: 0,
            retry_count: 0,
        })
    }

    pub fn current_iter(&self) -> u64 {
        self.current_iter
    }

    pub fn accepted(&self) -> &[GradientMessage] {
        &self.accepted
    }

    pub fn dropped_count(&self) -> u64 {
        self.dropped_count
    }

    /// Retries over the whole run.
    pub fn retry_count(&self) -> u64 {
        self.retry_count
    }

    /// The deadline currently in force for this iteration.
    pub fn deadline(&self) -> f64 {
        self.policy.deadline_after(self.retries)
    }

    pub fn is_complete(&self) -> bool {
        self.accepted.len() == self.total
    }

    pub fn offer(&mut self, msg: GradientMessage) -> Result<Offer> {
        let tag = check_tag(self.current_iter, &msg)?;
        if tag < self.current_iter {
            self.dropped_count += 1;
            return Ok(Offer::DroppedStale);
        }
        if self.closed
            || self.is_complete()
            || self.accepted.iter().any(|m| m.worker_id == msg.worker_id)
        {
            self.dropped_count += 1;
            return Ok(Offer::DroppedSurplus);
        }
        self.accepted.push(msg);
        Ok(Offer::Accepted {
            ready: self.is_complete(),
        })
    }

    /// Called when the current deadline passes. On `Ready` the collection is
    /// closed: later gradients for this iteration are surplus.
    pub fn on_deadline(&mut self) -> DeadlineOutcome {
        if self.accepted.len() >= self.policy.n_min {
            self.closed = true;
            DeadlineOutcome::Ready
        } else if self.retries < self.policy.max_retries {
            self.retries += 1;
            self.retry_count += 1;
            DeadlineOutcome::Retry {
                deadline: self.deadline(),
            }
        } else {
            DeadlineOutcome::Abort
        }
    }

    pub fn take(&mut self) -> Result<Vec<GradientMessage>> {
        if self.accepted.is_empty() {
            return Err(Error::Protocol(format!(
                "iteration {} closed with no gradients",
                self.current_iter
            )));
        }
        self.current_iter += 1;
        self.retries = 0;
        self.closed = false;
        Ok(std::mem::take(&mut self.accepted))
    }
}
