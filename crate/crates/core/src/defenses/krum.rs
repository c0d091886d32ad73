//! Krum and multi-Krum.

use super::{Defense, DefenseContext, DefenseVerdict, Diagnostics, Submission};
use crate::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum of squared distances from each update to its `n - f - 2` nearest others.
pub fn krum_scores(subs: &[Submission<'_>], f: usize) -> Result<Vec<f64>> {
    let n = subs.len();
    if n < f + 3 {
        return Err(Error::config(format!(
            "krum needs at least f + 3 = {} updates, got {n}",
            f + 3
        )));
    }
    let k = n - f - 2;
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(subs[i].update.as_slice(), subs[j].update.as_slice());
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[i][j]).collect();
            row.sort_by(f64::total_cmp);
            row[..k].iter().sum()
        })
        .collect())
}

/// Accepts the `m` lowest-scoring updates; ties go to the lower client id.
pub fn mkrum(subs: &[Submission<'_>], f: usize, m: usize) -> Result<DefenseVerdict> {
    if m == 0 || m > subs.len() {
        return Err(Error::config(format!(
            "mkrum m must lie in [1, {}], got {m}",
            subs.len()
        )));
    }
    let scores = krum_scores(subs, f)?;
    let mut order: Vec<usize> = (0..subs.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .total_cmp(&scores[b])
            .then(subs[a].client_id.cmp(&subs[b].client_id))
    });
    let mut keep = vec![false; subs.len()];
    for &i in &order[..m] {
        keep[i] = true;
    }
    let mut v = DefenseVerdict::select(subs, &keep);
    v.diagnostics = Diagnostics {
        scores: Some(scores),
        ..Diagnostics::default()
    };
    Ok(v)
}

pub fn krum(subs: &[Submission<'_>], f: usize) -> Result<DefenseVerdict> {
    mkrum(subs, f, 1)
}

/// Krum (`m = 1`) or multi-Krum.
#[derive(Debug, Clone)]
pub struct Krum {
    pub f: usize,
    pub m: usize,
}

impl Defense for Krum {
    fn name(&self) -> &'static str {
        if self.m == 1 {
            "krum"
        } else {
            "mkrum"
        }
    }

    fn apply(&mut self, _ctx: &DefenseContext<'_>, subs: &[Submission<'_>]) -> Result<DefenseVerdict> {
        mkrum(subs, self.f, self.m)
    }
}
