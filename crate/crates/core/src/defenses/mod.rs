//! Server-side defenses.
//!
//! A [`Defense`] sees the round's submissions (client id and update, never the
//! ground-truth malicious flag) and returns a [`DefenseVerdict`]: which ids are
//! accepted, their aggregation weights and possibly transformed updates. Robust
//! aggregators (median, trimmed mean) instead return the aggregate delta
//! directly.

mod cluster;
mod config;
mod filters;
mod flshield;
mod foolsgold;
mod freqfed;
mod krum;
mod robust;

pub use cluster::{agglomerative, cosine_distance_matrix, cosine_similarity, largest_cluster};
pub use config::DefenseConfig;
pub use filters::{flame_lite, nc_noise, norm_clip, Flame, NcNoise, NormClip};
pub use flshield::{flshield_lite, lipc, FlShield, ValidationSlice};
pub use foolsgold::{foolsgold, FoolsGold, FoolsGoldState};
pub use freqfed::{dct2, dct2_prefix, dct3, freqfed, FreqFed};
pub use krum::{krum, krum_scores, mkrum, Krum};
pub use robust::{median_agg, trimmed_mean_agg, Median, TrimmedMean};

use serde::{Deserialize, Serialize};

use crate::nn::{ModelArch, ParamVec};
use crate::{Error, Result};

/// One client's update as the server sees it.
#[derive(Debug, Clone, Copy)]
pub struct Submission<'a> {
    pub client_id: usize,
    pub update: &'a ParamVec,
}

pub struct DefenseContext<'a> {
    pub round: usize,
    /// Global model the updates were computed against.
    pub global: &'a ParamVec,
    pub arch: &'a ModelArch,
    /// Seed for this round's defense randomness.
    pub seed: u64,
}

/// Per-submission diagnostics, indexed like the submissions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_labels: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DefenseVerdict {
    /// Accepted client ids in submission order.
    pub accepted: Vec<usize>,
    pub rejected: Vec<usize>,
    /// Aggregation weight per accepted id.
    pub weights: Vec<f64>,
    /// Updates to aggregate, one per accepted id.
    pub updates: Vec<ParamVec>,
    /// Aggregate delta that replaces averaging altogether.
    pub delta: Option<ParamVec>,
    /// Noise added to the aggregated delta when at least one update is accepted.
    pub noise: Option<ParamVec>,
    pub diagnostics: Diagnostics,
}

impl DefenseVerdict {
    pub fn accept_all(subs: &[Submission<'_>]) -> Self {
        Self::select(subs, &vec![true; subs.len()])
    }

    /// Accepts `subs[i]` where `keep[i]`, unchanged and with weight 1.
    pub fn select(subs: &[Submission<'_>], keep: &[bool]) -> Self {
        let mut v = DefenseVerdict {
            accepted: Vec::new(),
            rejected: Vec::new(),
            weights: Vec::new(),
            updates: Vec::new(),
            delta: None,
            noise: None,
            diagnostics: Diagnostics::default(),
        };
        for (s, &k) in subs.iter().zip(keep) {
            if k {
                v.accepted.push(s.client_id);
                v.weights.push(1.0);
                v.updates.push(s.update.clone());
            } else {
                v.rejected.push(s.client_id);
            }
        }
        v
    }

    /// Checks that accepted and rejected partition the submitted ids and that
    /// weights and updates line up with the accepted ids.
    pub fn check(&self, subs: &[Submission<'_>]) -> Result<()> {
        let mut ids: Vec<usize> = self.accepted.iter().chain(&self.rejected).copied().collect();
        ids.sort_unstable();
        let mut submitted: Vec<usize> = subs.iter().map(|s| s.client_id).collect();
        submitted.sort_unstable();
        if ids != submitted {
            return Err(Error::config("defense verdict does not partition the submissions"));
        }
        if self.weights.len() != self.accepted.len() || self.updates.len() != self.accepted.len() {
            return Err(Error::config(
                "defense verdict weights/updates do not match accepted ids",
            ));
        }
        if self.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::config("defense weights must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub trait Defense: Send {
    fn name(&self) -> &'static str;

    fn apply(&mut self, ctx: &DefenseContext<'_>, subs: &[Submission<'_>]) -> Result<DefenseVerdict>;
}

/// Plain FedAvg.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoDefense;

impl Defense for NoDefense {
    fn name(&self) -> &'static str {
        "none"
    }

    fn apply(&mut self, _ctx: &DefenseContext<'_>, subs: &[Submission<'_>]) -> Result<DefenseVerdict> {
        Ok(DefenseVerdict::accept_all(subs))
    }
}
