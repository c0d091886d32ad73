//! Federated rounds: selection, local training, defense, aggregation and
//! per-round records.

use log::info;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{Attack, AttackContext, AttackerSlot, RoundObservation};
use crate::data::Dataset;
use crate::defenses::{Defense, DefenseContext, Diagnostics, Submission};
use crate::metrics::{back_acc, ben_acc};
use crate::nn::{sgd_train, ModelArch, ParamVec, TrainConfig};
use crate::rng::{derive_seed, rng_from, tag};
use crate::{Error, Result};

/// One client's output for a round.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateBundle {
    pub client_id: usize,
    /// `L - G`.
    pub update: ParamVec,
    /// Ground truth, used only for metrics.
    pub is_malicious: bool,
    pub update_norm: f64,
}

impl UpdateBundle {
    pub fn new(client_id: usize, update: ParamVec, is_malicious: bool) -> Self {
        let update_norm = update.norm();
        Self {
            client_id,
            update,
            is_malicious,
            update_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    CrossDevice,
    /// Every client takes part in every round.
    CrossSilo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub total_clients: usize,
    pub clients_per_round: usize,
    pub total_rounds: usize,
    /// `[start, end)`.
    pub attack_window: (usize, usize),
    pub global_lr: f64,
    pub local: TrainConfig,
    pub mode: Mode,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let (n, big_n) = (self.clients_per_round, self.total_clients);
        if n == 0 || n > big_n {
            return Err(Error::config(format!(
                "clients_per_round must lie in [1, {big_n}], got {n}"
            )));
        }
        if self.mode == Mode::CrossSilo && n != big_n {
            return Err(Error::config(
                "cross-silo mode requires clients_per_round = total_clients",
            ));
        }
        let (start, end) = self.attack_window;
        if start > end || end > self.total_rounds {
            return Err(Error::config(format!(
                "attack window [{start}, {end}) must lie within [0, {})",
                self.total_rounds
            )));
        }
        if !(self.global_lr > 0.0) {
            return Err(Error::config("global_lr must be > 0"));
        }
        self.local.validate()
    }

    pub fn in_attack_window(&self, round: usize) -> bool {
        (self.attack_window.0..self.attack_window.1).contains(&round)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSchedule {
    /// `count` attackers are forced into every attack-window round.
    Persistent { count: usize },
    /// A fixed set of `ceil(fraction * N)` clients attacks whenever selected.
    Random { fraction: f64 },
}

impl AttackSchedule {
    pub fn validate(&self, config: &ExperimentConfig) -> Result<()> {
        match *self {
            AttackSchedule::Persistent { count } if count > config.clients_per_round => Err(Error::config(format!(
                "{count} persistent attackers exceed {} clients per round",
                config.clients_per_round
            ))),
            AttackSchedule::Random { fraction } if !(0.0..=1.0).contains(&fraction) => Err(Error::config(format!(
                "malicious fraction must lie in [0, 1], got {fraction}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn attacker_count(&self, total_clients: usize) -> usize {
        match *self {
            AttackSchedule::Persistent { count } => count,
            AttackSchedule::Random { fraction } => {
                ((fraction * total_clients as f64 - 1e-9).ceil().max(0.0) as usize).min(total_clients)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Benign,
    Malicious,
}

/// The compromised client ids, fixed for the whole experiment, ascending.
pub fn choose_attackers(config: &ExperimentConfig, schedule: &AttackSchedule) -> Vec<usize> {
    let count = schedule.attacker_count(config.total_clients);
    let mut rng = rng_from(derive_seed(config.seed, &[tag::ATTACKER_SET]));
    let mut ids = sample(&mut rng, config.total_clients, count).into_vec();
    ids.sort_unstable();
    ids
}

/// Participants of `round` in ascending id order.
///
/// Attackers only take the malicious role inside the attack window; outside
/// it they are drawn like anyone else and train honestly.
pub fn select_clients(
    round: usize,
    config: &ExperimentConfig,
    schedule: Option<&AttackSchedule>,
    attackers: &[usize],
) -> Vec<(usize, Role)> {
    let active = config.in_attack_window(round) && schedule.is_some();
    let is_attacker = |id: usize| attackers.binary_search(&id).is_ok();
    let mut rng = rng_from(derive_seed(config.seed, &[tag::SELECTION, round as u64]));
    let mut ids: Vec<usize> = match (config.mode, schedule) {
        (Mode::CrossSilo, _) => (0..config.total_clients).collect(),
        (Mode::CrossDevice, Some(AttackSchedule::Persistent { .. })) if active => {
            let pool: Vec<usize> = (0..config.total_clients).filter(|&id| !is_attacker(id)).collect();
            let free = config.clients_per_round - attackers.len();
            let mut ids: Vec<usize> = sample(&mut rng, pool.len(), free)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            ids.extend_from_slice(attackers);
            ids
        }
        _ => sample(&mut rng, config.total_clients, config.clients_per_round).into_vec(),
    };
    ids.sort_unstable();
    ids.into_iter()
        .map(|id| {
            let role = if active && is_attacker(id) {
                Role::Malicious
            } else {
                Role::Benign
            };
            (id, role)
        })
        .collect()
}

/// Benign local training from `global`.
pub fn client_round(
    client_id: usize,
    global: &ParamVec,
    arch: &ModelArch,
    data: &Dataset,
    train: &TrainConfig,
    seed: u64,
) -> Result<UpdateBundle> {
    let local = sgd_train(global, arch, data, train, seed, &mut |_| {})?;
    Ok(UpdateBundle::new(client_id, local.sub(global), false))
}

/// `G + (eta / n) * sum(U)`, summing in the given order. An empty list leaves
/// `G` unchanged.
pub fn aggregate_fedavg(global: &ParamVec, updates: &[ParamVec], eta: f64) -> ParamVec {
    if updates.is_empty() {
        return global.clone();
    }
    let mut sum = global.zeros_like();
    for u in updates {
        sum.add_scaled(1.0, u);
    }
    let mut next = global.clone();
    next.add_scaled(eta / updates.len() as f64, &sum);
    next
}

/// `G + eta * sum(w U) / sum(w)`; reduces to [`aggregate_fedavg`] when every
/// weight is 1 and leaves `G` unchanged when the weights sum to zero.
pub fn aggregate_weighted(global: &ParamVec, updates: &[ParamVec], weights: &[f64], eta: f64) -> ParamVec {
    assert_eq!(updates.len(), weights.len(), "one weight per update");
    if weights.iter().all(|&w| w == 1.0) {
        return aggregate_fedavg(global, updates, eta);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return global.clone();
    }
    let mut sum = global.zeros_like();
    for (u, &w) in updates.iter().zip(weights) {
        sum.add_scaled(w, u);
    }
    let mut next = global.clone();
    next.add_scaled(eta / total, &sum);
    next
}

/// Per-round trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// `||G_{r+1} - G_r||`.
    pub global_update_norm: f64,
    /// `||G_{r+1} - G_0||`.
    pub distance_from_init: f64,
    pub selected: Vec<usize>,
    /// Ground truth: ids that submitted malicious updates.
    pub malicious_ids: Vec<usize>,
    pub accepted_ids: Vec<usize>,
    pub rejected_ids: Vec<usize>,
    pub accepted_benign: usize,
    pub accepted_malicious: usize,
    pub attacker_mean_update_norm: Option<f64>,
    pub malicious_update_norms: Vec<f64>,
    pub benign_norm_min: Option<f64>,
    pub benign_norm_max: Option<f64>,
    /// Region the attacker used this round, if it crafted updates.
    pub region_estimate: Option<f64>,
    /// Largest norm any single malicious update contributed to `G_{r+1} - G_r`.
    pub max_malicious_contribution: Option<f64>,
    pub back_acc: Option<f64>,
    pub ben_acc: f64,
    pub diagnostics: Diagnostics,
}

/// Everything the rounds read.
pub struct RunData<'a> {
    pub arch: &'a ModelArch,
    /// Indexed by client id.
    pub clients: &'a [Dataset],
    pub benign_test: &'a Dataset,
    pub backdoor_test: Option<&'a Dataset>,
}

/// The attacking side of an experiment.
pub struct Adversary<'a> {
    pub schedule: AttackSchedule,
    pub attack: &'a mut dyn Attack,
    /// Shared attacker training set.
    pub backdoor: &'a Dataset,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub final_model: ParamVec,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn run_rounds(
    config: &ExperimentConfig,
    mut adversary: Option<Adversary<'_>>,
    defense: &mut dyn Defense,
    data: &RunData<'_>,
    init: ParamVec,
) -> Result<RunOutput> {
    config.validate()?;
    if data.clients.len() != config.total_clients {
        return Err(Error::config(format!(
            "{} client datasets for {} clients",
            data.clients.len(),
            config.total_clients
        )));
    }
    let attackers = match &adversary {
        Some(a) => {
            a.schedule.validate(config)?;
            choose_attackers(config, &a.schedule)
        }
        None => Vec::new(),
    };
    let schedule = adversary.as_ref().map(|a| a.schedule.clone());
    let mut global = init.clone();
    let mut records = Vec::with_capacity(config.total_rounds);

    for round in 0..config.total_rounds {
        let selection = select_clients(round, config, schedule.as_ref(), &attackers);
        let benign_ids: Vec<usize> = selection
            .iter()
            .filter(|(_, r)| *r == Role::Benign)
            .map(|(id, _)| *id)
            .collect();
        let malicious_ids: Vec<usize> = selection
            .iter()
            .filter(|(_, r)| *r == Role::Malicious)
            .map(|(id, _)| *id)
            .collect();

        let mut bundles: Vec<UpdateBundle> = benign_ids
            .par_iter()
            .map(|&id| {
                let seed = derive_seed(config.seed, &[tag::CLIENT_TRAIN, id as u64, round as u64]);
                client_round(id, &global, data.arch, &data.clients[id], &config.local, seed)
                    .map_err(|e| e.in_round(round, id))
            })
            .collect::<Result<_>>()?;

        let mut region_estimate = None;
        if let (Some(adv), false) = (adversary.as_mut(), malicious_ids.is_empty()) {
            let slots: Vec<AttackerSlot<'_>> = malicious_ids
                .iter()
                .map(|&id| AttackerSlot {
                    client_id: id,
                    benign: &data.clients[id],
                    seed: derive_seed(config.seed, &[tag::ATTACK_TRAIN, id as u64, round as u64]),
                })
                .collect();
            let ctx = AttackContext {
                round,
                global: &global,
                arch: data.arch,
                backdoor: adv.backdoor,
                attackers: &slots,
                clients_per_round: selection.len(),
                global_lr: config.global_lr,
            };
            let crafted = adv
                .attack
                .craft(&ctx)
                .map_err(|e| e.in_round(round, malicious_ids[0]))?;
            if crafted.len() != slots.len() {
                return Err(
                    Error::config("attack returned the wrong number of updates").in_round(round, malicious_ids[0])
                );
            }
            for (b, &id) in crafted.iter().zip(&malicious_ids) {
                if b.client_id != id || b.update.len() != global.len() {
                    return Err(Error::shape(global.len(), b.update.len()).in_round(round, id));
                }
            }
            region_estimate = adv.attack.region_estimate();
            bundles.extend(crafted);
        }
        bundles.sort_by_key(|b| b.client_id);

        let subs: Vec<Submission<'_>> = bundles
            .iter()
            .map(|b| Submission {
                client_id: b.client_id,
                update: &b.update,
            })
            .collect();
        let dctx = DefenseContext {
            round,
            global: &global,
            arch: data.arch,
            seed: derive_seed(config.seed, &[tag::DEFENSE, round as u64]),
        };
        let verdict = defense.apply(&dctx, &subs).map_err(|e| e.in_defense(round))?;
        verdict.check(&subs).map_err(|e| e.in_defense(round))?;

        let is_mal = |id: usize| malicious_ids.binary_search(&id).is_ok();
        let mut next = match &verdict.delta {
            Some(delta) => {
                let mut g = global.clone();
                g.add_scaled(config.global_lr, delta);
                g
            }
            None => aggregate_weighted(&global, &verdict.updates, &verdict.weights, config.global_lr),
        };
        if let (Some(noise), false) = (&verdict.noise, verdict.accepted.is_empty()) {
            next.add_scaled(1.0, noise);
        }
        let max_malicious_contribution = if verdict.delta.is_some() {
            None
        } else {
            let total: f64 = verdict.weights.iter().sum();
            verdict
                .accepted
                .iter()
                .zip(&verdict.weights)
                .zip(&verdict.updates)
                .filter(|((id, _), _)| is_mal(**id))
                .map(|((_, w), u)| config.global_lr * w / total * u.norm())
                .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.max(c))))
        };

        let delta = next.sub(&global);
        let benign_norms: Vec<f64> = bundles
            .iter()
            .filter(|b| !b.is_malicious)
            .map(|b| b.update_norm)
            .collect();
        let malicious_norms: Vec<f64> = bundles
            .iter()
            .filter(|b| b.is_malicious)
            .map(|b| b.update_norm)
            .collect();
        let attacker_mean = mean(&malicious_norms);
        if let Some(adv) = adversary.as_mut() {
            adv.attack.observe(&RoundObservation {
                round,
                global_delta: &delta,
                attacker_mean_norm: attacker_mean,
            });
        }

        let accepted_malicious = verdict.accepted.iter().filter(|&&id| is_mal(id)).count();
        let record = RoundRecord {
            round,
            global_update_norm: delta.norm(),
            distance_from_init: next.sub(&init).norm(),
            selected: selection.iter().map(|(id, _)| *id).collect(),
            accepted_benign: verdict.accepted.len() - accepted_malicious,
            accepted_malicious,
            malicious_ids,
            accepted_ids: verdict.accepted.clone(),
            rejected_ids: verdict.rejected.clone(),
            attacker_mean_update_norm: attacker_mean,
            benign_norm_min: benign_norms.iter().copied().reduce(f64::min),
            benign_norm_max: benign_norms.iter().copied().reduce(f64::max),
            malicious_update_norms: malicious_norms,
            region_estimate,
            max_malicious_contribution,
            back_acc: data.backdoor_test.map(|t| back_acc(&next, data.arch, t)).transpose()?,
            ben_acc: ben_acc(&next, data.arch, data.benign_test)?,
            diagnostics: verdict.diagnostics,
        };
        if round % 50 == 0 || round + 1 == config.total_rounds {
            info!(
                "round {round}: ben_acc {:.1} back_acc {:?} accepted {}+{}",
                record.ben_acc, record.back_acc, record.accepted_benign, record.accepted_malicious
            );
        }
        records.push(record);
        global = next;
    }
    Ok(RunOutput {
        records,
        final_model: global,
    })
}
