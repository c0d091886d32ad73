//! Experiment configuration files.
//!
//! A config is TOML with the tables `[experiment]`, `[data]`, `[model]`,
//! `[backdoor]`, `[schedule]`, `[attack]` and `[defense]`. Every field has a
//! default matching the desk-scale preset, unknown keys are rejected.

use std::path::Path;

use anyhow::Context;
use migo_core::attacks::Attack;
use migo_core::attacks::{
    BaselineConfig, BetaSchedule, EstimatorConfig, LayerForcing, Migo, MigoConfig, MprMode, PgdRadius,
};
use migo_core::data::{BackdoorKind, BackdoorSpec, SyntheticSpec};
use migo_core::defenses::DefenseConfig;
use migo_core::engine::{AttackSchedule, ExperimentConfig, Mode};
use migo_core::nn::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Malformed or inconsistent configuration; the CLI maps it to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub name: String,
    pub seed: u64,
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub backdoor: BackdoorSection,
    pub schedule: AttackSchedule,
    pub attack: AttackSection,
    pub defense: DefenseConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 1,
            experiment: ExperimentSection::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            backdoor: BackdoorSection::default(),
            schedule: AttackSchedule::Persistent { count: 1 },
            attack: AttackSection::default(),
            defense: DefenseConfig::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub total_clients: usize,
    pub clients_per_round: usize,
    pub total_rounds: usize,
    pub attack_window: (usize, usize),
    pub global_lr: f64,
    pub mode: Mode,
    pub dirichlet_alpha: f64,
    pub local: LocalSection,
}

/// Benign clients' local SGD settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for LocalSection {
    fn default() -> Self {
        Self {
            epochs: 2,
            lr: 0.05,
            batch_size: 32,
        }
    }
}

impl From<LocalSection> for TrainConfig {
    fn from(l: LocalSection) -> Self {
        TrainConfig {
            epochs: l.epochs,
            lr: l.lr,
            batch_size: l.batch_size,
        }
    }
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            total_clients: 100,
            clients_per_round: 10,
            total_rounds: 400,
            attack_window: (50, 200),
            global_lr: 1.0,
            mode: Mode::CrossDevice,
            dirichlet_alpha: 0.9,
            local: LocalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub class_count: usize,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    /// Per-class examples carved from the test pool for validation-based defenses.
    pub validation_per_class: usize,
    pub cluster_spread: f64,
    pub mean_separation: f64,
    pub edge_parent: usize,
    pub edge_pool_size: usize,
    pub edge_subpop_fraction: f64,
    pub out_class_present: bool,
    pub out_pool_size: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            class_count: s.class_count,
            feature_dim: s.feature_dim,
            samples_per_class: s.samples_per_class,
            test_per_class: s.test_per_class,
            validation_per_class: 20,
            cluster_spread: s.cluster_spread,
            mean_separation: s.mean_separation,
            edge_parent: s.edge_parent,
            edge_pool_size: s.edge_pool_size,
            edge_subpop_fraction: s.edge_subpop_fraction,
            out_class_present: s.out_class_present,
            out_pool_size: s.out_pool_size,
        }
    }
}

impl DataSection {
    /// Generator spec; the test pool also holds the validation examples.
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            class_count: self.class_count,
            feature_dim: self.feature_dim,
            samples_per_class: self.samples_per_class,
            test_per_class: self.test_per_class + self.validation_per_class,
            cluster_spread: self.cluster_spread,
            mean_separation: self.mean_separation,
            edge_parent: self.edge_parent,
            edge_pool_size: self.edge_pool_size,
            edge_subpop_fraction: self.edge_subpop_fraction,
            out_class_present: self.out_class_present,
            out_pool_size: self.out_pool_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden: vec![32] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackdoorSection {
    pub kind: BackdoorKind,
    pub target_class: usize,
    pub true_label: usize,
    pub backdoor_label: usize,
    pub dataset_size: usize,
    pub malicious_fraction: f64,
    pub test_size: usize,
}

impl Default for BackdoorSection {
    fn default() -> Self {
        Self {
            kind: BackdoorKind::Edge,
            target_class: 0,
            true_label: 0,
            backdoor_label: 1,
            dataset_size: 256,
            malicious_fraction: 0.4,
            test_size: 100,
        }
    }
}

impl BackdoorSection {
    pub fn spec(&self, data: &DataSection) -> BackdoorSpec {
        BackdoorSpec {
            kind: self.kind,
            target_class: self.target_class,
            true_label: self.true_label,
            out_class: data.class_count,
            backdoor_label: self.backdoor_label,
            dataset_size: self.dataset_size,
            malicious_fraction: self.malicious_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Migo,
    Backpgd,
    Mrepl,
    Neurotoxin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    /// Fixed ESR and MPR.
    Static,
    /// Fixed ESR, MPR from the region estimator.
    Adaptive,
    /// Unconstrained training.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerForcingSection {
    pub layers: Vec<String>,
    pub benign_epochs: usize,
    pub finetune_batches: usize,
}

impl Default for LayerForcingSection {
    fn default() -> Self {
        Self {
            layers: vec!["output".into()],
            benign_epochs: 2,
            finetune_batches: 4,
        }
    }
}

/// Flat attack table; only the fields relevant to `kind` are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub kind: AttackKind,
    pub region: RegionMode,
    pub esr: f64,
    pub mpr: f64,
    pub allow_mpr_above_esr: bool,
    pub alpha: f64,
    /// Constant beta, used unless `beta_schedule` is non-empty.
    pub beta: f64,
    /// `[[first_round, beta], ...]`.
    pub beta_schedule: Vec<(usize, f64)>,
    pub r_default: f64,
    pub layer_forcing: Option<LayerForcingSection>,
    /// Static BackPGD radius; the adaptive estimate with beta 1 when absent.
    pub radius: Option<f64>,
    pub boost: f64,
    pub mask_fraction: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            kind: AttackKind::Migo,
            region: RegionMode::Static,
            esr: 3.0,
            mpr: 0.3,
            allow_mpr_above_esr: false,
            alpha: 0.5,
            beta: 1.0,
            beta_schedule: Vec::new(),
            r_default: 0.3,
            layer_forcing: None,
            radius: None,
            boost: 3.0,
            mask_fraction: 0.1,
            epochs: 5,
            lr: 0.4,
            batch_size: 32,
        }
    }
}

impl AttackSection {
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
        }
    }

    fn estimator(&self, beta: BetaSchedule) -> EstimatorConfig {
        EstimatorConfig {
            alpha: self.alpha,
            beta,
            r_default: self.r_default,
        }
    }

    fn beta(&self) -> migo_core::Result<BetaSchedule> {
        if self.beta_schedule.is_empty() {
            BetaSchedule::new(vec![(0, self.beta)])
        } else {
            BetaSchedule::new(self.beta_schedule.clone())
        }
    }

    pub fn migo_config(&self) -> migo_core::Result<MigoConfig> {
        let (esr, mpr) = match self.region {
            RegionMode::Static => (Some(self.esr), MprMode::Static(self.mpr)),
            RegionMode::Adaptive => (Some(self.esr), MprMode::Adaptive),
            RegionMode::None => (None, MprMode::Off),
        };
        let cfg = MigoConfig {
            esr,
            mpr,
            estimator: self.estimator(self.beta()?),
            layer_forcing: self.layer_forcing.as_ref().map(|lf| LayerForcing {
                layers: lf.layers.clone(),
                benign_epochs: lf.benign_epochs,
                finetune_batches: lf.finetune_batches,
            }),
            train: self.train(),
            allow_mpr_above_esr: self.allow_mpr_above_esr,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `None` for `kind = "none"`.
    pub fn build(&self) -> migo_core::Result<Option<Box<dyn Attack>>> {
        let train = self.train();
        Ok(match self.kind {
            AttackKind::None => None,
            AttackKind::Migo => Some(Box::new(Migo::new(self.migo_config()?)?)),
            AttackKind::Backpgd => {
                let radius = match self.radius {
                    Some(r) => PgdRadius::Static(r),
                    None => PgdRadius::Adaptive(self.estimator(BetaSchedule::constant(1.0))),
                };
                Some(BaselineConfig::BackPgd { radius, train }.into_attack()?)
            }
            AttackKind::Mrepl => Some(
                BaselineConfig::MRepl {
                    boost: self.boost,
                    train,
                }
                .into_attack()?,
            ),
            AttackKind::Neurotoxin => Some(
                BaselineConfig::Neurotoxin {
                    mask_fraction: self.mask_fraction,
                    train,
                }
                .into_attack()?,
            ),
        })
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))
            .map_err(anyhow::Error::from)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn engine_config(&self) -> ExperimentConfig {
        let e = &self.experiment;
        ExperimentConfig {
            total_clients: e.total_clients,
            clients_per_round: e.clients_per_round,
            total_rounds: e.total_rounds,
            attack_window: e.attack_window,
            global_lr: e.global_lr,
            local: e.local.into(),
            mode: e.mode,
            seed: self.seed,
        }
    }

    /// Layer sizes: input, hidden layers, label space (one extra output when
    /// the out-of-distribution class exists).
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.data.feature_dim];
        sizes.extend(&self.model.hidden);
        sizes.push(self.data.class_count + usize::from(self.data.out_class_present));
        sizes
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |field: &str, e: migo_core::Error| ConfigError(format!("[{field}] {e}"));
        let engine = self.engine_config();
        engine.validate().map_err(|e| wrap("experiment", e))?;
        let alpha = self.experiment.dirichlet_alpha;
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(ConfigError("[experiment] dirichlet_alpha must be > 0".into()));
        }
        self.data.synthetic_spec().validate().map_err(|e| wrap("data", e))?;
        if self.model.hidden.contains(&0) {
            return Err(ConfigError("[model] hidden sizes must be >= 1".into()));
        }
        let spec = self.backdoor.spec(&self.data);
        spec.validate(self.data.class_count).map_err(|e| wrap("backdoor", e))?;
        if spec.kind == BackdoorKind::Out && !self.data.out_class_present {
            return Err(ConfigError(
                "[backdoor] kind = \"out\" needs data.out_class_present = true".into(),
            ));
        }
        if self.backdoor.test_size == 0 {
            return Err(ConfigError("[backdoor] test_size must be > 0".into()));
        }
        self.schedule.validate(&engine).map_err(|e| wrap("schedule", e))?;
        if self.attack.kind != AttackKind::None {
            self.attack.build().map_err(|e| wrap("attack", e))?;
        }
        self.defense
            .validate(self.experiment.clients_per_round)
            .map_err(|e| wrap("defense", e))?;
        Ok(())
    }

    /// SHA-256 over the fully resolved config, ignoring `name` and `seed`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.name = String::new();
        c.seed = 0;
        let canonical = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
