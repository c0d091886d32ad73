//! Region-constrained backdoor insertion.
//!
//! Local training on the backdoor dataset runs inside an L2 ball around the
//! global model (the effective search region, ESR): after every batch the
//! model is projected back into it. The finished model is then projected into
//! a second, usually smaller ball (the model projection region, MPR) before
//! submission. The MPR can be fixed or re-estimated every round.
//!
//! Layer forcing additionally pins selected layers of each attacker's model to
//! the values of a benign model that attacker trained on its own data, so those
//! layers look like any other client's.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::region::{EstimatorConfig, RegionEstimatorState};
use super::{Attack, AttackContext, AttackerSlot, RoundObservation};
use crate::data::Dataset;
use crate::engine::UpdateBundle;
use crate::nn::{project_in_place, sgd_train, sgd_train_batches, ModelArch, ParamVec, TrainConfig};
use crate::rng::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MprMode {
    Off,
    Static(f64),
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerForcing {
    /// Layer names as in [`crate::nn::LayerMap::find`], e.g. `output`.
    pub layers: Vec<String>,
    /// Epochs each attacker spends training its benign look-alike model.
    pub benign_epochs: usize,
    /// Backdoor batches each attacker fine-tunes on after copying the shared model.
    pub finetune_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigoConfig {
    /// `None` disables the search region.
    pub esr: Option<f64>,
    pub mpr: MprMode,
    pub estimator: EstimatorConfig,
    pub layer_forcing: Option<LayerForcing>,
    pub train: TrainConfig,
    /// Accept a static MPR larger than the ESR (logged as a warning).
    pub allow_mpr_above_esr: bool,
}

impl Default for MigoConfig {
    fn default() -> Self {
        Self {
            esr: Some(3.0),
            mpr: MprMode::Static(0.3),
            estimator: EstimatorConfig::default(),
            layer_forcing: None,
            train: TrainConfig {
                epochs: 2,
                lr: 0.05,
                batch_size: 32,
            },
            allow_mpr_above_esr: false,
        }
    }
}

impl MigoConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.estimator.validate()?;
        if let Some(esr) = self.esr {
            if !(esr > 0.0) {
                return Err(Error::config(format!("esr must be > 0, got {esr}")));
            }
        }
        if let MprMode::Static(mpr) = self.mpr {
            if !(mpr >= 0.0) {
                return Err(Error::config(format!("mpr must be >= 0, got {mpr}")));
            }
            if let Some(esr) = self.esr {
                if mpr > esr {
                    if !self.allow_mpr_above_esr {
                        return Err(Error::config(format!(
                            "mpr {mpr} exceeds esr {esr}; the projection region must sit inside the search region"
                        )));
                    }
                    warn!("mpr {mpr} exceeds esr {esr}");
                }
            }
        }
        if let Some(lf) = &self.layer_forcing {
            if lf.layers.is_empty() {
                return Err(Error::config("layer forcing needs at least one layer"));
            }
        }
        Ok(())
    }
}

/// Trains on the backdoor data inside the ESR and projects the result into the MPR.
/// Returns the update `L' - G`.
pub fn migo_local_train(
    global: &ParamVec,
    arch: &ModelArch,
    backdoor: &Dataset,
    esr: Option<f64>,
    mpr: Option<f64>,
    train: &TrainConfig,
    seed: u64,
) -> Result<ParamVec> {
    migo_local_train_observed(global, arch, backdoor, esr, mpr, train, seed, &mut |_| {})
}

/// [`migo_local_train`] with a callback seeing every post-batch (post-projection) model.
#[allow(clippy::too_many_arguments)]
pub fn migo_local_train_observed(
    global: &ParamVec,
    arch: &ModelArch,
    backdoor: &Dataset,
    esr: Option<f64>,
    mpr: Option<f64>,
    train: &TrainConfig,
    seed: u64,
    observe: &mut dyn FnMut(&ParamVec),
) -> Result<ParamVec> {
    let mut local = sgd_train(global, arch, backdoor, train, seed, &mut |m| {
        if let Some(r) = esr {
            project_in_place(m, global, r);
        }
        observe(m);
    })?;
    if let Some(r) = mpr {
        project_in_place(&mut local, global, r);
    }
    Ok(local.sub(global))
}

fn selected_ranges(global: &ParamVec, layers: &[String]) -> Result<Vec<std::ops::Range<usize>>> {
    layers
        .iter()
        .map(|name| {
            global
                .layout()
                .find(name)
                .map(|s| s.range())
                .ok_or_else(|| Error::config(format!("unknown layer '{name}'")))
        })
        .collect()
}

fn pin(model: &mut ParamVec, source: &ParamVec, ranges: &[std::ops::Range<usize>]) {
    for r in ranges {
        model.copy_range_from(source, r.clone());
    }
}

/// Coordinated layer forcing across all attackers of the round.
///
/// 1. every attacker trains a benign model `B_i` on its own partition;
/// 2. the first attacker trains `M` on the backdoor data with the selected
///    layers held at its own `B_0`;
/// 3. every attacker copies `M`, pins the selected layers to its `B_i` and
///    fine-tunes `finetune_batches` batches on the backdoor data.
///
/// Returns the local models before any MPR projection, in attacker order.
pub fn layer_force(
    global: &ParamVec,
    arch: &ModelArch,
    backdoor: &Dataset,
    attackers: &[AttackerSlot<'_>],
    forcing: &LayerForcing,
    train: &TrainConfig,
    esr: Option<f64>,
) -> Result<Vec<ParamVec>> {
    if attackers.is_empty() {
        return Err(Error::config("layer forcing needs at least one attacker"));
    }
    let ranges = selected_ranges(global, &forcing.layers)?;

    let benign_cfg = TrainConfig {
        epochs: forcing.benign_epochs,
        ..*train
    };
    let benign_models: Vec<ParamVec> = attackers
        .par_iter()
        .map(|slot| {
            sgd_train(
                global,
                arch,
                slot.benign,
                &benign_cfg,
                derive_seed(slot.seed, &[1]),
                &mut |_| {},
            )
        })
        .collect::<Result<_>>()?;

    let constrain = |m: &mut ParamVec, anchor: &ParamVec| {
        if let Some(r) = esr {
            project_in_place(m, global, r);
        }
        pin(m, anchor, &ranges);
    };

    let mut start = global.clone();
    pin(&mut start, &benign_models[0], &ranges);
    let shared = sgd_train(
        &start,
        arch,
        backdoor,
        train,
        derive_seed(attackers[0].seed, &[2]),
        &mut |m| constrain(m, &benign_models[0]),
    )?;

    attackers
        .par_iter()
        .zip(benign_models.par_iter())
        .map(|(slot, b)| {
            let mut m = shared.clone();
            pin(&mut m, b, &ranges);
            sgd_train_batches(
                &m,
                arch,
                backdoor,
                train,
                forcing.finetune_batches,
                derive_seed(slot.seed, &[3]),
                &mut |m| constrain(m, b),
            )
        })
        .collect()
}

/// The MIGO strategy: region-constrained training, optional adaptive MPR and
/// optional layer forcing.
#[derive(Debug, Clone)]
pub struct Migo {
    cfg: MigoConfig,
    state: RegionEstimatorState,
    last_region: Option<f64>,
}

impl Migo {
    pub fn new(cfg: MigoConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: RegionEstimatorState::new(),
            last_region: None,
        })
    }

    pub fn config(&self) -> &MigoConfig {
        &self.cfg
    }

    pub fn estimator_state(&self) -> &RegionEstimatorState {
        &self.state
    }
}

impl Attack for Migo {
    fn name(&self) -> &'static str {
        "migo"
    }

    fn craft(&mut self, ctx: &AttackContext<'_>) -> Result<Vec<UpdateBundle>> {
        let mpr = match self.cfg.mpr {
            MprMode::Off => None,
            MprMode::Static(v) => Some(v),
            MprMode::Adaptive => Some(self.state.advance(&self.cfg.estimator, ctx.round).radius),
        };
        self.last_region = mpr;
        let esr = self.cfg.esr;
        let train = &self.cfg.train;

        let updates: Vec<ParamVec> = match &self.cfg.layer_forcing {
            Some(lf) => layer_force(ctx.global, ctx.arch, ctx.backdoor, ctx.attackers, lf, train, esr)?
                .into_iter()
                .map(|mut local| {
                    if let Some(r) = mpr {
                        project_in_place(&mut local, ctx.global, r);
                    }
                    local.sub(ctx.global)
                })
                .collect(),
            None => ctx
                .attackers
                .par_iter()
                .map(|slot| migo_local_train(ctx.global, ctx.arch, ctx.backdoor, esr, mpr, train, slot.seed))
                .collect::<Result<_>>()?,
        };
        Ok(ctx
            .attackers
            .iter()
            .zip(updates)
            .map(|(slot, u)| UpdateBundle::new(slot.client_id, u, true))
            .collect())
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::l2_distance;
    use crate::testkit::{cosine, toy, train_cfg};

    fn slots<'a>(clients: &'a [Dataset], count: usize) -> Vec<AttackerSlot<'a>> {
        (0..count)
            .map(|i| AttackerSlot {
                client_id: i,
                benign: &clients[i],
                seed: 100 + i as u64,
            })
            .collect()
    }

    #[test]
    fn zero_mpr_neuters_the_update() {
        let t = toy(1);
        let u = migo_local_train(&t.global, &t.arch, &t.backdoor, Some(3.0), Some(0.0), &train_cfg(), 7).unwrap();
        assert!(u.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn every_iterate_stays_in_the_search_region() {
        let t = toy(2);
        let esr = 0.5;
        let mut seen = 0;
        let mut worst: f64 = 0.0;
        let u = migo_local_train_observed(
            &t.global,
            &t.arch,
            &t.backdoor,
            Some(esr),
            Some(0.2),
            &train_cfg(),
            3,
            &mut |m| {
                seen += 1;
                worst = worst.max(l2_distance(m, &t.global).unwrap());
            },
        )
        .unwrap();
        assert_eq!(seen, 2 * 40usize.div_ceil(8));
        assert!(worst <= esr + 1e-9, "{worst}");
        // training actually reaches the boundary at this lr
        assert!(worst > 0.4);
        assert!(u.norm() <= 0.2 + 1e-9);
    }

    #[test]
    fn matches_plain_training_without_regions() {
        let t = toy(3);
        let cfg = train_cfg();
        let u = migo_local_train(&t.global, &t.arch, &t.backdoor, None, None, &cfg, 9).unwrap();
        let plain = sgd_train(&t.global, &t.arch, &t.backdoor, &cfg, 9, &mut |_| {}).unwrap();
        assert_eq!(u, plain.sub(&t.global));
    }

    #[test]
    fn mpr_above_esr_needs_override() {
        let mut cfg = MigoConfig {
            esr: Some(0.2),
            mpr: MprMode::Static(0.3),
            ..MigoConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.allow_mpr_above_esr = true;
        assert!(cfg.validate().is_ok());
        cfg.esr = Some(0.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn forced_layers_equal_each_attackers_benign_model() {
        let t = toy(4);
        let train = train_cfg();
        let lf = LayerForcing {
            layers: vec!["output".into()],
            benign_epochs: 2,
            finetune_batches: 3,
        };
        let s = slots(&t.clients, 3);
        let models = layer_force(&t.global, &t.arch, &t.backdoor, &s, &lf, &train, Some(3.0)).unwrap();
        let out = t.global.layout().output().range();
        let benign_cfg = TrainConfig { epochs: 2, ..train };
        for (slot, m) in s.iter().zip(&models) {
            let b = sgd_train(
                &t.global,
                &t.arch,
                slot.benign,
                &benign_cfg,
                derive_seed(slot.seed, &[1]),
                &mut |_| {},
            )
            .unwrap();
            assert_eq!(m.slice(out.clone()), b.slice(out.clone()));
        }
        assert_ne!(models[0].slice(0..out.start), models[1].slice(0..out.start));
    }

    #[test]
    fn no_finetuning_leaves_shared_blocks_identical() {
        let t = toy(5);
        let lf = LayerForcing {
            layers: vec!["output".into()],
            benign_epochs: 1,
            finetune_batches: 0,
        };
        let s = slots(&t.clients, 3);
        let models = layer_force(&t.global, &t.arch, &t.backdoor, &s, &lf, &train_cfg(), None).unwrap();
        let hidden = t.global.layout().find("hidden0").unwrap().range();
        assert_eq!(models[0].slice(hidden.clone()), models[1].slice(hidden.clone()));
        assert_eq!(models[1].slice(hidden.clone()), models[2].slice(hidden));
    }

    #[test]
    fn unknown_layer_is_a_config_error() {
        let t = toy(6);
        let lf = LayerForcing {
            layers: vec!["conv1".into()],
            benign_epochs: 1,
            finetune_batches: 1,
        };
        let s = slots(&t.clients, 1);
        let err = layer_force(&t.global, &t.arch, &t.backdoor, &s, &lf, &train_cfg(), None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    fn mean_pairwise_output_cosine(updates: &[ParamVec]) -> f64 {
        let out = updates[0].layout().output().range();
        let mut total = 0.0;
        let mut count = 0.0;
        for i in 0..updates.len() {
            for j in i + 1..updates.len() {
                total += cosine(updates[i].slice(out.clone()), updates[j].slice(out.clone()));
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn layer_forcing_spreads_output_layers_apart() {
        let t = toy(7);
        let base = MigoConfig {
            esr: Some(3.0),
            mpr: MprMode::Static(1.0),
            train: train_cfg(),
            ..MigoConfig::default()
        };
        let forced = MigoConfig {
            layer_forcing: Some(LayerForcing {
                layers: vec!["output".into()],
                benign_epochs: 2,
                finetune_batches: 2,
            }),
            ..base.clone()
        };
        let s = slots(&t.clients, 3);
        let ctx = AttackContext {
            round: 0,
            global: &t.global,
            arch: &t.arch,
            backdoor: &t.backdoor,
            attackers: &s,
            clients_per_round: 6,
            global_lr: 1.0,
        };
        let run = |cfg: MigoConfig| -> Vec<ParamVec> {
            let mut a = Migo::new(cfg).unwrap();
            a.craft(&ctx).unwrap().into_iter().map(|b| b.update).collect()
        };
        let plain = mean_pairwise_output_cosine(&run(base));
        let lf = mean_pairwise_output_cosine(&run(forced));
        assert!(lf < plain, "forced {lf} vs plain {plain}");
    }

    #[test]
    fn adaptive_mode_uses_default_until_history_exists() {
        let t = toy(8);
        let s = slots(&t.clients, 1);
        let mut a = Migo::new(MigoConfig {
            mpr: MprMode::Adaptive,
            train: train_cfg(),
            ..MigoConfig::default()
        })
        .unwrap();
        let ctx = AttackContext {
            round: 0,
            global: &t.global,
            arch: &t.arch,
            backdoor: &t.backdoor,
            attackers: &s,
            clients_per_round: 6,
            global_lr: 1.0,
        };
        let b = a.craft(&ctx).unwrap();
        assert_eq!(a.region_estimate(), Some(0.3));
        assert!(b[0].update.norm() <= 0.3 + 1e-9);
        assert!(b[0].is_malicious);
        let delta = t.global.zeros_like();
        for n in [0.5, 0.4] {
            a.observe(&RoundObservation {
                round: 0,
                global_delta: &delta.with_values(vec![n / (delta.len() as f64).sqrt(); delta.len()]),
                attacker_mean_norm: Some(0.3),
            });
        }
        a.craft(&ctx).unwrap();
        assert_eq!(a.estimator_state().best_history().len(), 1);
        assert_ne!(a.region_estimate(), Some(0.3));
    }
}
