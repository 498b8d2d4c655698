//! Random-walk Metropolis building blocks.

use serde::{Deserialize, Serialize};

use crate::stats::RandomStream;

const BATCH: usize = 25;
const MAX_LOG_STEP: f64 = 5.0;
const MIN_LOG_STEP: f64 = -12.0;

/// Metropolis–Hastings acceptance test for a symmetric proposal.
#[inline]
pub fn metropolis_accept(log_ratio: f64, stream: &mut RandomStream) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio.is_nan() {
        return false;
    }
    stream.uniform().ln() < log_ratio
}

/// Gaussian random-walk scale, tuned towards a target acceptance rate while
/// adapting and frozen afterwards.
///
/// Adaptation works on batches of 25 proposals; after batch `k` the log step
/// moves by `min(0.5, 1/sqrt(k))` in the direction of the target.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptiveStep {
    log_step: f64,
    target: f64,
    adapting: bool,
    batch_accepted: usize,
    batch_total: usize,
    batches: usize,
    accepted: usize,
    proposed: usize,
}

impl AdaptiveStep {
    pub fn new(initial_step: f64, target: f64) -> Self {
        assert!(initial_step > 0.0, "step must be positive");
        Self {
            log_step: initial_step.ln(),
            target,
            adapting: true,
            batch_accepted: 0,
            batch_total: 0,
            batches: 0,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn propose(&self, current: f64, stream: &mut RandomStream) -> f64 {
        current + self.step() * stream.std_normal()
    }

    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as usize;
        if !self.adapting {
            return;
        }
        self.batch_total += 1;
        self.batch_accepted += accepted as usize;
        if self.batch_total == BATCH {
            self.batches += 1;
            let rate = self.batch_accepted as f64 / BATCH as f64;
            let delta = (1.0 / (self.batches as f64).sqrt()).min(0.5);
            if rate > self.target {
                self.log_step += delta;
            } else {
                self.log_step -= delta;
            }
            self.log_step = self.log_step.clamp(MIN_LOG_STEP, MAX_LOG_STEP);
            self.batch_total = 0;
            self.batch_accepted = 0;
        }
    }

    /// Stop adapting and reset the acceptance counters.
    pub fn freeze(&mut self) {
        self.adapting = false;
        self.accepted = 0;
        self.proposed = 0;
    }

    pub fn is_adapting(&self) -> bool {
        self.adapting
    }

    /// Acceptance rate since the last freeze (or since creation).
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn proposed(&self) -> usize {
        self.proposed
    }
}
