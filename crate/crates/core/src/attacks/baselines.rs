//! Baseline attacks: projected gradient descent (BackPGD), boosted model
//! replacement (MRepl) and bottom-k coordinate masking (Neurotoxin).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::region::{BetaSchedule, EstimatorConfig, RegionEstimatorState};
use super::{migo_local_train, plain_update, Attack, AttackContext, AttackerSlot, RoundObservation};
use crate::data::Dataset;
use crate::engine::UpdateBundle;
use crate::nn::{ModelArch, ParamVec, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PgdRadius {
    Static(f64),
    Adaptive(EstimatorConfig),
}

impl Default for PgdRadius {
    fn default() -> Self {
        PgdRadius::Adaptive(EstimatorConfig {
            beta: BetaSchedule::constant(1.0),
            ..EstimatorConfig::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaselineConfig {
    BackPgd { radius: PgdRadius, train: TrainConfig },
    MRepl { boost: f64, train: TrainConfig },
    Neurotoxin { mask_fraction: f64, train: TrainConfig },
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineConfig::BackPgd { radius, train } => {
                train.validate()?;
                match radius {
                    PgdRadius::Static(r) if !(*r >= 0.0) => {
                        Err(Error::config(format!("projection radius must be >= 0, got {r}")))
                    }
                    PgdRadius::Adaptive(est) => est.validate(),
                    _ => Ok(()),
                }
            }
            BaselineConfig::MRepl { boost, train } => {
                train.validate()?;
                if !(*boost >= 1.0) {
                    return Err(Error::config(format!("boost factor must be >= 1, got {boost}")));
                }
                Ok(())
            }
            BaselineConfig::Neurotoxin { mask_fraction, train } => {
                train.validate()?;
                if !(*mask_fraction > 0.0 && *mask_fraction <= 1.0) {
                    return Err(Error::config(format!(
                        "mask fraction must lie in (0, 1], got {mask_fraction}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn into_attack(self) -> Result<Box<dyn Attack>> {
        self.validate()?;
        Ok(match self {
            BaselineConfig::BackPgd { radius, train } => Box::new(BackPgd::new(radius, train)),
            BaselineConfig::MRepl { boost, train } => Box::new(MRepl { boost, train }),
            BaselineConfig::Neurotoxin { mask_fraction, train } => Box::new(Neurotoxin::new(mask_fraction, train)),
        })
    }
}

fn bundle(slots: &[AttackerSlot<'_>], updates: Vec<ParamVec>) -> Vec<UpdateBundle> {
    slots
        .iter()
        .zip(updates)
        .map(|(s, u)| UpdateBundle::new(s.client_id, u, true))
        .collect()
}

/// PGD on the backdoor data: every batch is projected onto the ball of
/// `radius` around the global model; there is no separate end-of-round region.
pub fn backpgd_local_train(
    global: &ParamVec,
    arch: &ModelArch,
    backdoor: &Dataset,
    radius: f64,
    train: &TrainConfig,
    seed: u64,
) -> Result<ParamVec> {
    migo_local_train(global, arch, backdoor, Some(radius), None, train, seed)
}

#[derive(Debug, Clone)]
pub struct BackPgd {
    radius: PgdRadius,
    train: TrainConfig,
    state: RegionEstimatorState,
    last_region: Option<f64>,
}

impl BackPgd {
    pub fn new(radius: PgdRadius, train: TrainConfig) -> Self {
        Self {
            radius,
            train,
            state: RegionEstimatorState::new(),
            last_region: None,
        }
    }
}

impl Attack for BackPgd {
    fn name(&self) -> &'static str {
        "backpgd"
    }

    fn craft(&mut self, ctx: &AttackContext<'_>) -> Result<Vec<UpdateBundle>> {
        let radius = match &self.radius {
            PgdRadius::Static(r) => *r,
            PgdRadius::Adaptive(est) => self.state.advance(est, ctx.round).radius,
        };
        self.last_region = Some(radius);
        let train = self.train;
        let updates = ctx
            .attackers
            .par_iter()
            .map(|s| backpgd_local_train(ctx.global, ctx.arch, ctx.backdoor, radius, &train, s.seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(bundle(ctx.attackers, updates))
    }

    fn observe(&mut self, obs: &RoundObservation<'_>) {
        self.state.observe_global(obs.global_delta.norm());
        if let Some(a) = obs.attacker_mean_norm {
            self.state.observe_attacker(a);
        }
    }

    fn region_estimate(&self) -> Option<f64> {
        self.last_region
    }
}

/// Boost that makes a single update replace the global model under FedAvg
/// with `clients_per_round` participants and global rate `global_lr`.
pub fn replacement_boost(clients_per_round: usize, global_lr: f64) -> f64 {
    clients_per_round as f64 / global_lr
}

/// Unconstrained training on the backdoor data, returning `boost * (X - G)`.
pub fn mrepl_local_train(
    global: &ParamVec,
    arch: &ModelArch,
    backdoor: &Dataset,
    boost: f64,
    train: &TrainConfig,
    seed: u64,
) -> Result<ParamVec> {
    Ok(plain_update(global, arch, backdoor, train, seed, &mut |_| {})?.scaled(boost))
}

#[derive(Debug, Clone)]
pub struct MRepl {
    pub boost: f64,
    pub train: TrainConfig,
}

impl Attack for MRepl {
    fn name(&self) -> &'static str {
        "mrepl"
    }

    fn craft(&mut self, ctx: &AttackContext<'_>) -> Result<Vec<UpdateBundle>> {
        let updates = ctx
            .attackers
            .par_iter()
            .map(|s| mrepl_local_train(ctx.global, ctx.arch, ctx.backdoor, self.boost, &self.train, s.seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(bundle(ctx.attackers, updates))
    }

    fn observe(&mut self, _obs: &RoundObservation<'_>) {}
}

/// Marks the `ceil(fraction * len)` coordinates with the smallest `|delta|`
/// (ties broken by index).
pub fn bottom_k_mask(delta: &[f64], fraction: f64) -> Vec<bool> {
    let count = ((fraction * delta.len() as f64) - 1e-9)
        .ceil()
        .clamp(0.0, delta.len() as f64) as usize;
    let mut order: Vec<usize> = (0..delta.len()).collect();
    order.sort_by(|&a, &b| delta[a].abs().total_cmp(&delta[b].abs()).then(a.cmp(&b)));
    let mut mask = vec![false; delta.len()];
    for &i in &order[..count] {
        mask[i] = true;
    }
    mask
}

/// Training on the backdoor data where only masked coordinates may move:
/// after every batch the others are reset to the global model's values.
pub fn neurotoxin_local_train(
    global: &ParamVec,
    arch: &ModelArch,
    backdoor: &Dataset,
    mask: &[bool],
    train: &TrainConfig,
    seed: u64,
) -> Result<ParamVec> {
    if mask.len() != global.len() {
        return Err(Error::shape(global.len(), mask.len()));
    }
    let g = global.as_slice();
    plain_update(global, arch, backdoor, train, seed, &mut |m| {
        for ((v, &keep), &gv) in m.as_mut_slice().iter_mut().zip(mask).zip(g) {
            if !keep {
                *v = gv;
            }
        }
    })
}

#[derive(Debug, Clone)]
pub struct Neurotoxin {
    mask_fraction: f64,
    train: TrainConfig,
    last_delta: Option<Vec<f64>>,
}

impl Neurotoxin {
    pub fn new(mask_fraction: f64, train: TrainConfig) -> Self {
        Self {
            mask_fraction,
            train,
            last_delta: None,
        }
    }
}

impl Attack for Neurotoxin {
    fn name(&self) -> &'static str {
        "neurotoxin"
    }

    fn craft(&mut self, ctx: &AttackContext<'_>) -> Result<Vec<UpdateBundle>> {
        // Before any global change has been seen there is nothing to hide behind.
        let mask = match &self.last_delta {
            Some(d) => bottom_k_mask(d, self.mask_fraction),
            None => vec![true; ctx.global.len()],
        };
        let updates = ctx
            .attackers
            .par_iter()
            .map(|s| neurotoxin_local_train(ctx.global, ctx.arch, ctx.backdoor, &mask, &self.train, s.seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(bundle(ctx.attackers, updates))
    }

    fn observe(&mut self, obs: &RoundObservation<'_>) {
        self.last_delta = Some(obs.global_delta.as_slice().to_vec());
    }
}
