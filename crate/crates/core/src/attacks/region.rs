//! Adaptive region estimation.
//!
//! The attacker cannot see benign updates, but it sees consecutive global
//! models, and under FedAvg their difference is the mean submitted update. The
//! estimator keeps a rolling value `best` that follows the global-update norm,
//! using the trend of the last two global-update norms and of the attacker's
//! own submitted norms to decide whether to follow, pause, or take the
//! conservative (min) or permissive (max) reading. The returned radius is
//! `beta * best`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Piecewise-constant `beta` schedule: `(first_round, beta)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule(Vec<(usize, f64)>);

impl BetaSchedule {
    pub fn constant(beta: f64) -> Self {
        Self(vec![(0, beta)])
    }

    pub fn new(mut steps: Vec<(usize, f64)>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::config("beta schedule needs at least one entry"));
        }
        if let Some((_, b)) = steps.iter().find(|(_, b)| !(*b > 0.0)) {
            return Err(Error::config(format!("beta must be > 0, got {b}")));
        }
        steps.sort_by_key(|(r, _)| *r);
        if steps.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::config("beta schedule has duplicate rounds"));
        }
        Ok(Self(steps))
    }

    /// Beta in effect at `round`; rounds before the first entry use the first value.
    pub fn at(&self, round: usize) -> f64 {
        self.0.iter().rev().find(|(r, _)| *r <= round).unwrap_or(&self.0[0]).1
    }

    pub fn steps(&self) -> &[(usize, f64)] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Rolling-average weight on the previous estimate.
    pub alpha: f64,
    pub beta: BetaSchedule,
    /// Radius used until two attacker rounds have been observed.
    pub r_default: f64,
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.r_default > 0.0) {
            return Err(Error::config("r_default must be > 0"));
        }
        Ok(())
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: BetaSchedule::constant(1.0),
            r_default: 0.3,
        }
    }
}

/// Append-only histories feeding the estimator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionEstimatorState {
    best: Vec<f64>,
    attacker_norms: Vec<f64>,
    global_norms: Vec<f64>,
}

impl RegionEstimatorState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Restores a state from its three histories, oldest first.
    pub fn from_histories(best: Vec<f64>, attacker_norms: Vec<f64>, global_norms: Vec<f64>) -> Self {
        Self {
            best,
            attacker_norms,
            global_norms,
        }
    }

    /// `||G_r - G_{r-1}||`, recorded once per round.
    pub fn observe_global(&mut self, norm: f64) {
        self.global_norms.push(norm);
    }

    /// Mean norm of the attacker's submitted updates, on rounds it submitted.
    pub fn observe_attacker(&mut self, mean_norm: f64) {
        self.attacker_norms.push(mean_norm);
    }

    pub fn best_history(&self) -> &[f64] {
        &self.best
    }

    pub fn attacker_history(&self) -> &[f64] {
        &self.attacker_norms
    }

    pub fn global_history(&self) -> &[f64] {
        &self.global_norms
    }

    /// Computes the region for this round and records the new `best`.
    pub fn advance(&mut self, cfg: &EstimatorConfig, round: usize) -> RegionStep {
        let step = estimate_region(self, cfg.alpha, cfg.beta.at(round), cfg.r_default);
        if let Some(b) = step.best {
            self.best.push(b);
        }
        step
    }
}

/// Which arm of the estimator produced the value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// Fewer than two attacker (or global) observations.
    Default,
    /// Global updates growing, attacker norms not growing: follow the rolling estimate.
    GrowingFollow,
    /// Global updates growing while attacker norms grow: hold the previous estimate.
    GrowingPause,
    /// Global updates shrinking, attacker norms not shrinking: follow the rolling estimate.
    ShrinkingFollow,
    /// Global updates shrinking along with attacker norms: hold the previous estimate.
    ShrinkingPause,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionStep {
    pub radius: f64,
    /// New `best`, absent on the default path.
    pub best: Option<f64>,
    pub branch: Branch,
}

/// One estimator step. Pure: the caller decides whether to record `best`.
pub fn estimate_region(state: &RegionEstimatorState, alpha: f64, beta: f64, r_default: f64) -> RegionStep {
    let a = &state.attacker_norms;
    let g = &state.global_norms;
    if a.len() < 2 || g.len() < 2 {
        return RegionStep {
            radius: r_default,
            best: None,
            branch: Branch::Default,
        };
    }
    let (a_l, a_ll) = (a[a.len() - 1], a[a.len() - 2]);
    let (gu_l, gu_ll) = (g[g.len() - 1], g[g.len() - 2]);
    // No estimate yet: start from the value that reproduces the default radius.
    let prev = state.best.last().copied().unwrap_or(r_default / beta);
    let tentative = alpha * prev + (1.0 - alpha) * gu_l;
    let pick: fn(f64, f64) -> f64 = if a_l >= gu_l { f64::min } else { f64::max };

    let (best, branch) = if gu_l >= gu_ll {
        if a_l <= a_ll {
            (pick(tentative, gu_l), Branch::GrowingFollow)
        } else {
            (pick(prev, gu_l), Branch::GrowingPause)
        }
    } else if a_l >= a_ll {
        (pick(tentative, gu_l), Branch::ShrinkingFollow)
    } else {
        (pick(prev, gu_l), Branch::ShrinkingPause)
    };
    RegionStep {
        radius: beta * best,
        best: Some(best),
        branch,
    }
}
