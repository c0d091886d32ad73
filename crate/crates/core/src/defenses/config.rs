use serde::{Deserialize, Serialize};

use super::{
    Defense, FlShield, Flame, FoolsGold, FreqFed, Krum, Median, NcNoise, NoDefense, NormClip, TrimmedMean,
    ValidationSlice,
};
use crate::{Error, Result};

fn theta() -> f64 {
    0.15
}

fn sigma() -> f64 {
    1e-3
}

fn rho() -> f64 {
    0.25
}

/// Serializable defense selection, tagged by `kind`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DefenseConfig {
    #[default]
    None,
    NormClip {
        tau: f64,
    },
    NcNoise {
        tau: f64,
        #[serde(default = "sigma")]
        sigma: f64,
    },
    Krum {
        f: usize,
    },
    Mkrum {
        f: usize,
        m: usize,
    },
    Foolsgold,
    Flame {
        #[serde(default = "theta")]
        theta: f64,
        #[serde(default = "sigma")]
        sigma: f64,
    },
    Freqfed {
        #[serde(default = "theta")]
        theta: f64,
        #[serde(default = "rho")]
        rho: f64,
    },
    Flshield {
        #[serde(default = "theta")]
        theta: f64,
        /// LIPC threshold; calibrated from a clean run when absent.
        #[serde(default)]
        lambda: Option<f64>,
    },
    Median,
    TrimmedMean {
        trim_fraction: f64,
    },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::config(format!("{name} must be > 0, got {v}")));
    }
    Ok(())
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::config(format!("{name} must be >= 0, got {v}")));
    }
    Ok(())
}

impl DefenseConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DefenseConfig::None => "none",
            DefenseConfig::NormClip { .. } => "norm_clip",
            DefenseConfig::NcNoise { .. } => "nc_noise",
            DefenseConfig::Krum { .. } => "krum",
            DefenseConfig::Mkrum { .. } => "mkrum",
            DefenseConfig::Foolsgold => "foolsgold",
            DefenseConfig::Flame { .. } => "flame",
            DefenseConfig::Freqfed { .. } => "freqfed",
            DefenseConfig::Flshield { .. } => "flshield",
            DefenseConfig::Median => "median",
            DefenseConfig::TrimmedMean { .. } => "trimmed_mean",
        }
    }

    /// Checks parameter ranges; `clients_per_round` bounds Krum's `f` and `m`.
    pub fn validate(&self, clients_per_round: usize) -> Result<()> {
        match *self {
            DefenseConfig::None | DefenseConfig::Foolsgold | DefenseConfig::Median => Ok(()),
            DefenseConfig::NormClip { tau } => positive("tau", tau),
            DefenseConfig::NcNoise { tau, sigma } => {
                positive("tau", tau)?;
                non_negative("sigma", sigma)
            }
            DefenseConfig::Krum { f } => DefenseConfig::Mkrum { f, m: 1 }.validate(clients_per_round),
            DefenseConfig::Mkrum { f, m } => {
                if clients_per_round < f + 3 {
                    return Err(Error::config(format!(
                        "krum with f = {f} needs at least {} clients per round",
                        f + 3
                    )));
                }
                if m == 0 || m > clients_per_round {
                    return Err(Error::config(format!("mkrum m must lie in [1, {clients_per_round}]")));
                }
                Ok(())
            }
            DefenseConfig::Flame { theta, sigma } => {
                non_negative("theta", theta)?;
                non_negative("sigma", sigma)
            }
            DefenseConfig::Freqfed { theta, rho } => {
                non_negative("theta", theta)?;
                if !(rho > 0.0 && rho <= 1.0) {
                    return Err(Error::config(format!("rho must lie in (0, 1], got {rho}")));
                }
                Ok(())
            }
            DefenseConfig::Flshield { theta, lambda } => {
                non_negative("theta", theta)?;
                match lambda {
                    Some(l) if !l.is_finite() => Err(Error::config("lambda must be finite")),
                    _ => Ok(()),
                }
            }
            DefenseConfig::TrimmedMean { trim_fraction } => {
                if !(0.0..0.5).contains(&trim_fraction) {
                    return Err(Error::config(format!(
                        "trim_fraction must lie in [0, 0.5), got {trim_fraction}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Instantiates the defense. FLShield needs a validation slice and a
    /// resolved `lambda`.
    pub fn build(&self, validation: Option<&ValidationSlice>) -> Result<Box<dyn Defense>> {
        Ok(match *self {
            DefenseConfig::None => Box::new(NoDefense),
            DefenseConfig::NormClip { tau } => Box::new(NormClip { tau }),
            DefenseConfig::NcNoise { tau, sigma } => Box::new(NcNoise { tau, sigma }),
            DefenseConfig::Krum { f } => Box::new(Krum { f, m: 1 }),
            DefenseConfig::Mkrum { f, m } => Box::new(Krum { f, m }),
            DefenseConfig::Foolsgold => Box::new(FoolsGold::default()),
            DefenseConfig::Flame { theta, sigma } => Box::new(Flame { theta, sigma }),
            DefenseConfig::Freqfed { theta, rho } => Box::new(FreqFed { theta, rho }),
            DefenseConfig::Flshield { theta, lambda } => {
                let lambda = lambda.ok_or_else(|| Error::config("flshield lambda has not been calibrated"))?;
                let validation = validation
                    .ok_or_else(|| Error::config("flshield needs a validation slice"))?
                    .clone();
                Box::new(FlShield {
                    theta,
                    lambda,
                    validation,
                })
            }
            DefenseConfig::Median => Box::new(Median),
            DefenseConfig::TrimmedMean { trim_fraction } => Box::new(TrimmedMean { trim_fraction }),
        })
    }
}
