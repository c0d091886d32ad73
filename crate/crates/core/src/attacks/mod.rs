//! Malicious-client strategies.
//!
//! An [`Attack`] is asked once per round to craft updates for every attacker
//! the server selected, and is shown every round's global-model change so it
//! can track benign update magnitudes.

mod baselines;
mod migo;
mod region;

pub use baselines::{
    backpgd_local_train, bottom_k_mask, mrepl_local_train, neurotoxin_local_train, replacement_boost, BackPgd,
    BaselineConfig, MRepl, Neurotoxin, PgdRadius,
};
pub use migo::{layer_force, migo_local_train, migo_local_train_observed, LayerForcing, Migo, MigoConfig, MprMode};
pub use region::{estimate_region, BetaSchedule, Branch, EstimatorConfig, RegionEstimatorState, RegionStep};

use crate::data::Dataset;
use crate::engine::UpdateBundle;
use crate::nn::{ModelArch, ParamVec, TrainConfig};
use crate::Result;

/// One compromised client taking part in the current round.
#[derive(Debug, Clone, Copy)]
pub struct AttackerSlot<'a> {
    pub client_id: usize,
    /// The client's own (benign) partition.
    pub benign: &'a Dataset,
    /// Per-client training seed for this round.
    pub seed: u64,
}

pub struct AttackContext<'a> {
    pub round: usize,
    pub global: &'a ParamVec,
    pub arch: &'a ModelArch,
    /// Shared attacker dataset mixing benign and backdoor examples.
    pub backdoor: &'a Dataset,
    pub attackers: &'a [AttackerSlot<'a>],
    pub clients_per_round: usize,
    pub global_lr: f64,
}

/// What every participant can see after a round: the global model moved by `global_delta`.
pub struct RoundObservation<'a> {
    pub round: usize,
    pub global_delta: &'a ParamVec,
    /// Mean norm of the updates the attackers submitted this round, if any.
    pub attacker_mean_norm: Option<f64>,
}

pub trait Attack: Send {
    fn name(&self) -> &'static str;

    /// Returns one update per entry of `ctx.attackers`, in the same order.
    fn craft(&mut self, ctx: &AttackContext<'_>) -> Result<Vec<UpdateBundle>>;

    fn observe(&mut self, obs: &RoundObservation<'_>);

    /// Radius used in the most recent crafted round, for strategies that have one.
    fn region_estimate(&self) -> Option<f64> {
        None
    }
}

/// Unconstrained local training on `data`, returning `L - G`.
pub(crate) fn plain_update(
    global: &ParamVec,
    arch: &ModelArch,
    data: &Dataset,
    train: &TrainConfig,
    seed: u64,
    hook: &mut dyn FnMut(&mut ParamVec),
) -> Result<ParamVec> {
    let local = crate::nn::sgd_train(global, arch, data, train, seed, hook)?;
    Ok(local.sub(global))
}
