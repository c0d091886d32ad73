//! Simplified FLShield: validates each cluster's representative model against
//! the previous global model on a server-held validation slice.

use super::cluster::{agglomerative, cosine_distance_matrix};
use super::robust::median_agg;
use super::{Defense, DefenseContext, DefenseVerdict, Diagnostics, Submission};
use crate::data::Dataset;
use crate::nn::{loss, Batch, ModelArch, ParamVec};
use crate::{Error, Result};

/// Labeled examples held by the server, grouped by class.
#[derive(Debug, Clone)]
pub struct ValidationSlice {
    per_class: Vec<(usize, Batch)>,
}

impl ValidationSlice {
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        let per_class: Vec<(usize, Batch)> = (0..data.class_count())
            .map(|c| (c, data.indices_of(c)))
            .filter(|(_, idx)| !idx.is_empty())
            .map(|(c, idx)| (c, data.batch(&idx)))
            .collect();
        if per_class.is_empty() {
            return Err(Error::data("validation slice is empty"));
        }
        Ok(Self { per_class })
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_class.iter().map(|(c, _)| *c)
    }
}

fn class_losses(model: &ParamVec, arch: &ModelArch, validation: &ValidationSlice) -> Result<Vec<f64>> {
    validation.per_class.iter().map(|(_, b)| loss(model, arch, b)).collect()
}

/// Largest per-class loss increase of `model` over `reference`.
pub fn lipc(model: &ParamVec, reference: &ParamVec, arch: &ModelArch, validation: &ValidationSlice) -> Result<f64> {
    let base = class_losses(reference, arch, validation)?;
    lipc_against(model, &base, arch, validation)
}

fn lipc_against(model: &ParamVec, base: &[f64], arch: &ModelArch, validation: &ValidationSlice) -> Result<f64> {
    Ok(class_losses(model, arch, validation)?
        .iter()
        .zip(base)
        .map(|(l, b)| l - b)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Clusters the updates by cosine distance; a cluster is rejected when the
/// LIPC of `global + median(cluster)` exceeds `lambda`.
pub fn flshield_lite(
    subs: &[Submission<'_>],
    global: &ParamVec,
    arch: &ModelArch,
    validation: &ValidationSlice,
    theta: f64,
    lambda: f64,
) -> Result<DefenseVerdict> {
    if subs.is_empty() {
        return Ok(DefenseVerdict::accept_all(subs));
    }
    let refs: Vec<&[f64]> = subs.iter().map(|s| s.update.as_slice()).collect();
    let labels = agglomerative(&cosine_distance_matrix(&refs), theta);
    let clusters = labels.iter().max().map_or(0, |m| m + 1);
    let base = class_losses(global, arch, validation)?;
    let mut cluster_lipc = Vec::with_capacity(clusters);
    for c in 0..clusters {
        let members: Vec<&ParamVec> = subs
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == c)
            .map(|(s, _)| s.update)
            .collect();
        let rep = global.add(&median_agg(&members)?);
        cluster_lipc.push(lipc_against(&rep, &base, arch, validation)?);
    }
    let keep: Vec<bool> = labels.iter().map(|&l| cluster_lipc[l] <= lambda).collect();
    let mut v = DefenseVerdict::select(subs, &keep);
    v.diagnostics = Diagnostics {
        scores: Some(labels.iter().map(|&l| cluster_lipc[l]).collect()),
        cluster_labels: Some(labels),
        ..Diagnostics::default()
    };
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct FlShield {
    pub theta: f64,
    pub lambda: f64,
    pub validation: ValidationSlice,
}

impl Defense for FlShield {
    fn name(&self) -> &'static str {
        "flshield"
    }

    fn apply(&mut self, ctx: &DefenseContext<'_>, subs: &[Submission<'_>]) -> Result<DefenseVerdict> {
        flshield_lite(subs, ctx.global, ctx.arch, &self.validation, self.theta, self.lambda)
    }
}
