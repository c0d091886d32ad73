//! FreqFed: clusters the low-frequency DCT coefficients of the updates and
//! keeps the largest cluster.

use std::f64::consts::PI;

use super::cluster::{agglomerative, cosine_distance_matrix, largest_cluster};
use super::{Defense, DefenseContext, DefenseVerdict, Diagnostics, Submission};
use crate::{Error, Result};

/// `cos(pi * m / (2n))` for `m` in `0..4n`; DCT arguments reduce mod `4n`.
fn cos_table(n: usize) -> Vec<f64> {
    (0..4 * n).map(|m| (PI * m as f64 / (2.0 * n as f64)).cos()).collect()
}

fn scale(n: usize, k: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// First `count` coefficients of the orthonormal DCT-II of `x`.
pub fn dct2_prefix(x: &[f64], count: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let table = cos_table(n);
    let period = 4 * n;
    (0..count.min(n))
        .map(|k| {
            let step = (2 * k) % period;
            let mut idx = k % period;
            let mut acc = 0.0;
            for &xi in x {
                acc += xi * table[idx];
                idx += step;
                if idx >= period {
                    idx -= period;
                }
            }
            scale(n, k) * acc
        })
        .collect()
}

/// Orthonormal DCT-II.
pub fn dct2(x: &[f64]) -> Vec<f64> {
    dct2_prefix(x, x.len())
}

/// Orthonormal DCT-III, the inverse of [`dct2`].
pub fn dct3(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    if n == 0 {
        return Vec::new();
    }
    let table = cos_table(n);
    let period = 4 * n;
    let scaled: Vec<f64> = c.iter().enumerate().map(|(k, v)| scale(n, k) * v).collect();
    (0..n)
        .map(|i| {
            // argument (2i + 1) k
            let step = (2 * i + 1) % period;
            let mut idx = 0;
            let mut acc = 0.0;
            for &ck in &scaled {
                acc += ck * table[idx];
                idx += step;
                if idx >= period {
                    idx -= period;
                }
            }
            acc
        })
        .collect()
}

/// Accepts the largest cluster of low-frequency fingerprints. The accepted
/// updates are aggregated as submitted.
pub fn freqfed(subs: &[Submission<'_>], theta: f64, rho: f64) -> Result<DefenseVerdict> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::config(format!("freqfed rho must lie in (0, 1], got {rho}")));
    }
    if subs.is_empty() {
        return Ok(DefenseVerdict::accept_all(subs));
    }
    let len = subs[0].update.len();
    let keep_coeffs = ((rho * len as f64).ceil() as usize).clamp(1, len);
    let prints: Vec<Vec<f64>> = subs
        .iter()
        .map(|s| dct2_prefix(s.update.as_slice(), keep_coeffs))
        .collect();
    let refs: Vec<&[f64]> = prints.iter().map(Vec::as_slice).collect();
    let labels = agglomerative(&cosine_distance_matrix(&refs), theta);
    let ids: Vec<usize> = subs.iter().map(|s| s.client_id).collect();
    let winner = largest_cluster(&labels, &ids);
    let keep: Vec<bool> = labels.iter().map(|&l| Some(l) == winner).collect();
    let mut v = DefenseVerdict::select(subs, &keep);
    v.diagnostics = Diagnostics {
        cluster_labels: Some(labels),
        ..Diagnostics::default()
    };
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct FreqFed {
    pub theta: f64,
    pub rho: f64,
}

impl Defense for FreqFed {
    fn name(&self) -> &'static str {
        "freqfed"
    }

    fn apply(&mut self, _ctx: &DefenseContext<'_>, subs: &[Submission<'_>]) -> Result<DefenseVerdict> {
        freqfed(subs, self.theta, self.rho)
    }
}
