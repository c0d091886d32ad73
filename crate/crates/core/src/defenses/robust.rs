//! Coordinate-wise median and trimmed mean, used directly as the aggregate delta.

use super::{Defense, DefenseContext, DefenseVerdict, Submission};
use crate::nn::ParamVec;
use crate::{Error, Result};

fn coordinate_wise(updates: &[&ParamVec], mut f: impl FnMut(&mut [f64]) -> f64) -> Result<ParamVec> {
    let first = updates
        .first()
        .ok_or_else(|| Error::config("robust aggregation needs at least one update"))?;
    let len = first.len();
    if let Some(bad) = updates.iter().find(|u| u.len() != len) {
        return Err(Error::shape(len, bad.len()));
    }
    let mut column = vec![0.0; updates.len()];
    let values = (0..len)
        .map(|j| {
            for (c, u) in column.iter_mut().zip(updates) {
                *c = u.as_slice()[j];
            }
            column.sort_by(f64::total_cmp);
            f(&mut column)
        })
        .collect();
    Ok(first.with_values(values))
}

pub fn median_agg(updates: &[&ParamVec]) -> Result<ParamVec> {
    coordinate_wise(updates, |col| {
        let n = col.len();
        if n % 2 == 1 {
            col[n / 2]
        } else {
            0.5 * (col[n / 2 - 1] + col[n / 2])
        }
    })
}

/// Drops the `floor(trim_fraction * n)` smallest and largest values per coordinate.
pub fn trimmed_mean_agg(updates: &[&ParamVec], trim_fraction: f64) -> Result<ParamVec> {
    if !(0.0..0.5).contains(&trim_fraction) {
        return Err(Error::config(format!(
            "trim fraction must lie in [0, 0.5), got {trim_fraction}"
        )));
    }
    let n = updates.len();
    let k = (trim_fraction * n as f64 + 1e-9).floor() as usize;
    if 2 * k >= n {
        return Err(Error::config(format!(
            "trimming {k} from each end leaves nothing of {n}"
        )));
    }
    coordinate_wise(updates, |col| {
        let kept = &col[k..col.len() - k];
        kept.iter().sum::<f64>() / kept.len() as f64
    })
}

fn delta_verdict(subs: &[Submission<'_>], delta: Option<ParamVec>) -> DefenseVerdict {
    let mut v = DefenseVerdict::accept_all(subs);
    v.delta = delta;
    v
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Median;

impl Defense for Median {
    fn name(&self) -> &'static str {
        "median"
    }

    fn apply(&mut self, _ctx: &DefenseContext<'_>, subs: &[Submission<'_>]) -> Result<DefenseVerdict> {
        if subs.is_empty() {
            return Ok(delta_verdict(subs, None));
        }
        let us: Vec<&ParamVec> = subs.iter().map(|s| s.update).collect();
        Ok(delta_verdict(subs, Some(median_agg(&us)?)))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrimmedMean {
    pub trim_fraction: f64,
}

impl Defense for TrimmedMean {
    fn name(&self) -> &'static str {
        "trimmed_mean"
    }

    fn apply(&mut self, _ctx: &DefenseContext<'_>, subs: &[Submission<'_>]) -> Result<DefenseVerdict> {
        if subs.is_empty() {
            return Ok(delta_verdict(subs, None));
        }
        let us: Vec<&ParamVec> = subs.iter().map(|s| s.update).collect();
        Ok(delta_verdict(subs, Some(trimmed_mean_agg(&us, self.trim_fraction)?)))
    }
}
