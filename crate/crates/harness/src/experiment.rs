//! Turns a [`Config`] into data, model, attack and defense, and runs it.

use log::info;
use migo_core::data::{
    backdoor_test_set, build_backdoor_dataset, dirichlet_partition, gen_synthetic, BackdoorPools, Dataset,
};
use migo_core::defenses::{DefenseConfig, FlShield, ValidationSlice};
use migo_core::engine::{run_rounds, Adversary, RoundRecord, RunData};
use migo_core::metrics::{summarize, MetricRow, MetricSeries, SummaryReport};
use migo_core::nn::{init_model, ModelArch, ParamVec};
use migo_core::rng::{derive_seed, tag};

use crate::config::Config;

/// Everything a run needs, built deterministically from the config and seed.
pub struct Experiment {
    pub config: Config,
    pub arch: ModelArch,
    pub init: ParamVec,
    pub clients: Vec<Dataset>,
    pub benign_test: Dataset,
    pub validation: Dataset,
    pub backdoor_train: Dataset,
    pub backdoor_test: Dataset,
}

pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    pub series: MetricSeries,
    pub summary: SummaryReport,
    pub final_model: ParamVec,
    /// FLShield threshold actually used, when it was calibrated.
    pub flshield_lambda: Option<f64>,
}

/// Splits the generated test pool into a class-balanced validation slice
/// (first `per_class` examples of every class) and the benign test set.
fn carve_validation(test: &Dataset, per_class: usize) -> (Dataset, Dataset) {
    let mut val = Vec::new();
    let mut rest = Vec::new();
    for c in 0..test.class_count() {
        let idx = test.indices_of(c);
        let k = per_class.min(idx.len());
        val.extend_from_slice(&idx[..k]);
        rest.extend_from_slice(&idx[k..]);
    }
    val.sort_unstable();
    rest.sort_unstable();
    (test.subset(&val), test.subset(&rest))
}

impl Experiment {
    pub fn build(config: &Config) -> migo_core::Result<Self> {
        let seed = config.seed;
        let synth = gen_synthetic(&config.data.synthetic_spec(), derive_seed(seed, &[tag::DATA]))?;
        let (validation, benign_test) = carve_validation(&synth.test, config.data.validation_per_class);
        let plan = dirichlet_partition(
            &synth.train,
            config.experiment.total_clients,
            config.experiment.dirichlet_alpha,
            derive_seed(seed, &[tag::PARTITION]),
        )?;
        let clients = plan.materialize(&synth.train);

        let spec = config.backdoor.spec(&config.data);
        let pools = BackdoorPools {
            benign_classes: config.data.class_count,
            train: &synth.train,
            test: &benign_test,
            edge: &synth.edge_pool,
            out: synth.out_pool.as_ref(),
        };
        let backdoor_train = build_backdoor_dataset(&pools, &spec, derive_seed(seed, &[tag::BACKDOOR, 0]))?;
        let backdoor_test = backdoor_test_set(
            &spec,
            &pools,
            config.backdoor.test_size,
            derive_seed(seed, &[tag::BACKDOOR, 1]),
        )?;

        let arch = ModelArch::new(config.layer_sizes())?;
        let init = init_model(&arch, derive_seed(seed, &[tag::INIT]))?;
        Ok(Self {
            config: config.clone(),
            arch,
            init,
            clients,
            benign_test,
            validation,
            backdoor_train,
            backdoor_test,
        })
    }

    fn data(&self) -> RunData<'_> {
        RunData {
            arch: &self.arch,
            clients: &self.clients,
            benign_test: &self.benign_test,
            backdoor_test: Some(&self.backdoor_test),
        }
    }

    /// FLShield threshold: three times the median cluster LIPC seen over a
    /// clean run of the pre-attack rounds (at least 20).
    pub fn calibrate_flshield(&self, theta: f64, validation: &ValidationSlice) -> migo_core::Result<f64> {
        let mut engine = self.config.engine_config();
        engine.total_rounds = self.config.experiment.attack_window.0.max(20);
        engine.attack_window = (engine.total_rounds, engine.total_rounds);
        let mut probe = FlShield {
            theta,
            lambda: f64::INFINITY,
            validation: validation.clone(),
        };
        let out = run_rounds(&engine, None, &mut probe, &self.data(), self.init.clone())?;
        let mut scores: Vec<f64> = out
            .records
            .iter()
            .filter_map(|r| r.diagnostics.scores.as_ref())
            .flatten()
            .copied()
            .collect();
        scores.sort_by(f64::total_cmp);
        let median = if scores.is_empty() {
            0.0
        } else {
            scores[scores.len() / 2]
        };
        Ok(3.0 * median.abs().max(1e-3))
    }

    pub fn run(&self) -> migo_core::Result<ExperimentResult> {
        let cfg = &self.config;
        let validation = ValidationSlice::from_dataset(&self.validation)?;
        let mut flshield_lambda = None;
        let defense_cfg = match cfg.defense {
            DefenseConfig::Flshield { theta, lambda: None } => {
                let lambda = self.calibrate_flshield(theta, &validation)?;
                info!("flshield lambda calibrated to {lambda:.6}");
                flshield_lambda = Some(lambda);
                DefenseConfig::Flshield {
                    theta,
                    lambda: Some(lambda),
                }
            }
            ref other => other.clone(),
        };
        let mut defense = defense_cfg.build(Some(&validation))?;
        let mut attack = cfg.attack.build()?;
        let adversary = attack.as_deref_mut().map(|attack| Adversary {
            schedule: cfg.schedule.clone(),
            attack,
            backdoor: &self.backdoor_train,
        });
        let out = run_rounds(
            &cfg.engine_config(),
            adversary,
            defense.as_mut(),
            &self.data(),
            self.init.clone(),
        )?;
        let series = MetricSeries {
            rows: out.records.iter().map(metric_row).collect(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
        };
        let summary = summarize(&series, cfg.experiment.attack_window);
        Ok(ExperimentResult {
            records: out.records,
            series,
            summary,
            final_model: out.final_model,
            flshield_lambda,
        })
    }
}

pub fn metric_row(r: &RoundRecord) -> MetricRow {
    MetricRow {
        round: r.round,
        back_acc: r.back_acc.unwrap_or(0.0),
        ben_acc: r.ben_acc,
        global_update_norm: r.global_update_norm,
        accepted_benign: r.accepted_benign,
        accepted_malicious: r.accepted_malicious,
        region_estimate: r.region_estimate,
    }
}

pub fn run_experiment(config: &Config) -> migo_core::Result<ExperimentResult> {
    Experiment::build(config)?.run()
}
