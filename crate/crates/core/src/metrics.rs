//! Accuracy metrics, longevity and run summaries.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::nn::{predict, ModelArch, ParamVec};
use crate::{Error, Result};

fn accuracy(params: &ParamVec, arch: &ModelArch, data: &Dataset, what: &str) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::data(format!("{what} test set is empty")));
    }
    let preds = predict(params, arch, &data.inputs())?;
    let hits = preds.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / data.len() as f64)
}

/// Percentage of backdoor instances classified with the backdoor label.
///
/// `backdoor_test` carries the backdoor label on every example.
pub fn back_acc(params: &ParamVec, arch: &ModelArch, backdoor_test: &Dataset) -> Result<f64> {
    accuracy(params, arch, backdoor_test, "backdoor")
}

/// Percentage of the class-balanced benign test set classified correctly.
pub fn ben_acc(params: &ParamVec, arch: &ModelArch, benign_test: &Dataset) -> Result<f64> {
    accuracy(params, arch, benign_test, "benign")
}

/// Mean of the values at `round - 2 ..= round + 2`, truncated at the series
/// edges. `None` when `round` lies past the end.
pub fn longevity(series: &[f64], round: usize) -> Option<f64> {
    if round >= series.len() {
        return None;
    }
    let lo = round.saturating_sub(2);
    let hi = (round + 2).min(series.len() - 1);
    let window = &series[lo..=hi];
    Some(window.iter().sum::<f64>() / window.len() as f64)
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub round: usize,
    pub back_acc: f64,
    pub ben_acc: f64,
    pub global_update_norm: f64,
    pub accepted_benign: usize,
    pub accepted_malicious: usize,
    pub region_estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSeries {
    pub rows: Vec<MetricRow>,
    pub config_hash: String,
    pub seed: u64,
}

impl MetricSeries {
    pub fn back_acc(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.back_acc).collect()
    }

    pub fn ben_acc(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ben_acc).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub max_acc: f64,
    pub l100: Option<f64>,
    pub l300: Option<f64>,
    pub l600: Option<f64>,
    pub final_ben_acc: f64,
    /// Mean BenAcc over the 10 rounds before the attack minus the mean over
    /// the last 10 attack rounds.
    pub ben_acc_drop: Option<f64>,
    pub config_hash: String,
    pub seed: u64,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// `attack_window` is `[start, end)`; `L_k` is the longevity at `end + k`.
pub fn summarize(series: &MetricSeries, attack_window: (usize, usize)) -> SummaryReport {
    let back = series.back_acc();
    let ben = series.ben_acc();
    let (start, end) = attack_window;
    let end_in = end.min(ben.len());
    let before = &ben[start.saturating_sub(10).min(ben.len())..start.min(ben.len())];
    let during = &ben[end_in.saturating_sub(10).max(start.min(end_in))..end_in];
    let ben_acc_drop = match (mean(before), mean(during)) {
        (Some(b), Some(d)) => Some(b - d),
        _ => None,
    };
    SummaryReport {
        max_acc: back.iter().copied().fold(0.0, f64::max),
        l100: longevity(&back, end + 100),
        l300: longevity(&back, end + 300),
        l600: longevity(&back, end + 600),
        final_ben_acc: ben.last().copied().unwrap_or(0.0),
        ben_acc_drop,
        config_hash: series.config_hash.clone(),
        seed: series.seed,
    }
}
