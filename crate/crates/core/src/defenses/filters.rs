//! Norm clipping, clipping with noise, and a simplified Flame.

use rand_distr::{Distribution, Normal};

use super::cluster::{agglomerative, cosine_distance_matrix, largest_cluster};
use super::{Defense, DefenseContext, DefenseVerdict, Diagnostics, Submission};
use crate::nn::ParamVec;
use crate::rng::rng_from;
use crate::{Error, Result};

fn clip(u: &ParamVec, bound: f64) -> ParamVec {
    let n = u.norm();
    if n > bound {
        u.scaled(bound / n)
    } else {
        u.clone()
    }
}

fn gaussian(len: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut rng = rng_from(seed);
    (0..len).map(|_| normal.sample(&mut rng)).collect()
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    Ok(())
}

/// Rescales every update longer than `tau` to norm `tau`; accepts all.
pub fn norm_clip(subs: &[Submission<'_>], tau: f64) -> DefenseVerdict {
    let mut v = DefenseVerdict::accept_all(subs);
    for u in &mut v.updates {
        *u = clip(u, tau);
    }
    v
}

/// [`norm_clip`] followed by i.i.d. Gaussian noise on every coordinate.
pub fn nc_noise(subs: &[Submission<'_>], tau: f64, sigma: f64, seed: u64) -> Result<DefenseVerdict> {
    check_sigma(sigma)?;
    let mut v = norm_clip(subs, tau);
    if sigma > 0.0 {
        for (k, u) in v.updates.iter_mut().enumerate() {
            let noise = gaussian(u.len(), sigma, crate::rng::derive_seed(seed, &[k as u64]));
            for (x, e) in u.as_mut_slice().iter_mut().zip(noise) {
                *x += e;
            }
        }
    }
    Ok(v)
}

/// Cluster by cosine distance, keep the largest cluster, clip it to its median
/// norm and add Gaussian noise of scale `sigma` to the aggregate.
pub fn flame_lite(subs: &[Submission<'_>], theta: f64, sigma: f64, seed: u64) -> Result<DefenseVerdict> {
    check_sigma(sigma)?;
    if subs.is_empty() {
        return Ok(DefenseVerdict::accept_all(subs));
    }
    let refs: Vec<&[f64]> = subs.iter().map(|s| s.update.as_slice()).collect();
    let labels = agglomerative(&cosine_distance_matrix(&refs), theta);
    let ids: Vec<usize> = subs.iter().map(|s| s.client_id).collect();
    let keep_label = largest_cluster(&labels, &ids);
    let keep: Vec<bool> = labels.iter().map(|&l| Some(l) == keep_label).collect();
    let mut v = DefenseVerdict::select(subs, &keep);

    let mut norms: Vec<f64> = v.updates.iter().map(|u| u.norm()).collect();
    norms.sort_by(f64::total_cmp);
    let m = norms.len();
    let median = if m % 2 == 1 {
        norms[m / 2]
    } else {
        0.5 * (norms[m / 2 - 1] + norms[m / 2])
    };
    for u in &mut v.updates {
        *u = clip(u, median);
    }
    if sigma > 0.0 {
        let proto = subs[0].update;
        v.noise = Some(proto.with_values(gaussian(proto.len(), sigma, seed)));
    }
    v.diagnostics = Diagnostics {
        cluster_labels: Some(labels),
        ..Diagnostics::default()
    };
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct NormClip {
    pub tau: f64,
}

impl Defense for NormClip {
    fn name(&self) -> &'static str {
        "norm_clip"
    }

    fn apply(&mut self, _ctx: &DefenseContext<'_>, subs: &[Submission<'_>]) -> Result<DefenseVerdict> {
        Ok(norm_clip(subs, self.tau))
    }
}

#[derive(Debug, Clone)]
pub struct NcNoise {
    pub tau: f64,
    pub sigma: f64,
}

impl Defense for NcNoise {
    fn name(&self) -> &'static str {
        "nc_noise"
    }

    fn apply(&mut self, ctx: &DefenseContext<'_>, subs: &[Submission<'_>]) -> Result<DefenseVerdict> {
        nc_noise(subs, self.tau, self.sigma, ctx.seed)
    }
}

#[derive(Debug, Clone)]
pub struct Flame {
    pub theta: f64,
    pub sigma: f64,
}

impl Defense for Flame {
    fn name(&self) -> &'static str {
        "flame"
    }

    fn apply(&mut self, ctx: &DefenseContext<'_>, subs: &[Submission<'_>]) -> Result<DefenseVerdict> {
        flame_lite(subs, self.theta, self.sigma, ctx.seed)
    }
}
