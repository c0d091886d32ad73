//! Synthetic classification tasks, client partitioning and backdoor datasets.
//!
//! Every example remembers where it came from ([`Origin`]): which pool and
//! which index inside it. That bookkeeping is what lets the attacker's training
//! set and the backdoor test set be provably disjoint, and lets tests check
//! which generator an example was drawn from.

use std::io::Read;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::nn::{Batch, Matrix};
use crate::rng::rng_from;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pool {
    Train,
    Test,
    Edge,
    Out,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Origin {
    pub pool: Pool,
    pub index: usize,
}

/// Labeled feature vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    origins: Vec<Origin>,
    feature_dim: usize,
    class_count: usize,
}

impl Dataset {
    pub fn empty(feature_dim: usize, class_count: usize) -> Self {
        Self {
            features: Vec::new(),
            labels: Vec::new(),
            origins: Vec::new(),
            feature_dim,
            class_count,
        }
    }

    /// Appends one example. Panics if the feature length or label is out of range.
    pub fn push(&mut self, features: &[f64], label: usize, origin: Origin) {
        assert_eq!(features.len(), self.feature_dim, "feature length mismatch");
        assert!(label < self.class_count, "label {label} out of range");
        self.features.extend_from_slice(features);
        self.labels.push(label);
        self.origins.push(origin);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn origin(&self, i: usize) -> Origin {
        self.origins[i]
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn count_class(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    /// Widens the label space (e.g. to reserve an output for an absent class).
    pub fn with_class_count(mut self, class_count: usize) -> Self {
        assert!(class_count >= self.class_count, "cannot shrink label space");
        self.class_count = class_count;
        self
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::empty(self.feature_dim, self.class_count);
        for &i in indices {
            out.push(self.features(i), self.labels[i], self.origins[i]);
        }
        out
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let mut data = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Batch {
            inputs: Matrix::new(indices.len(), self.feature_dim, data).expect("consistent shape"),
            labels,
        }
    }

    pub fn inputs(&self) -> Matrix {
        Matrix::new(self.len(), self.feature_dim, self.features.clone()).expect("consistent shape")
    }

    /// Indices of all examples with the given label, in order.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }
}

/// Parameters of the Gaussian-cluster task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    pub cluster_spread: f64,
    /// Minimum pairwise distance between class means, in units of `cluster_spread`.
    pub mean_separation: f64,
    /// Class whose displaced sub-cluster forms the edge pool.
    pub edge_parent: usize,
    pub edge_pool_size: usize,
    /// Fraction of the edge parent's benign training samples drawn from the
    /// edge sub-cluster instead of the main cluster.
    pub edge_subpop_fraction: f64,
    pub out_class_present: bool,
    pub out_pool_size: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            class_count: 10,
            feature_dim: 8,
            samples_per_class: 200,
            test_per_class: 100,
            cluster_spread: 0.6,
            mean_separation: 8.0,
            edge_parent: 0,
            edge_pool_size: 400,
            edge_subpop_fraction: 0.0,
            out_class_present: true,
            out_pool_size: 400,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::config("class_count must be >= 2"));
        }
        if self.feature_dim == 0 || self.samples_per_class == 0 {
            return Err(Error::config("feature_dim and samples_per_class must be >= 1"));
        }
        if !(self.cluster_spread > 0.0) {
            return Err(Error::config(format!(
                "cluster_spread must be > 0, got {}",
                self.cluster_spread
            )));
        }
        if !(self.mean_separation > 0.0) {
            return Err(Error::config("mean_separation must be > 0"));
        }
        if self.edge_parent >= self.class_count {
            return Err(Error::config("edge_parent must be a benign class"));
        }
        if !(0.0..=1.0).contains(&self.edge_subpop_fraction) {
            return Err(Error::config("edge_subpop_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Label index of the out-of-distribution class, if generated.
    pub fn out_class(&self) -> Option<usize> {
        self.out_class_present.then_some(self.class_count)
    }
}

/// Cluster centres used by the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub class_means: Vec<Vec<f64>>,
    pub edge_center: Vec<f64>,
    pub out_mean: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
    pub edge_pool: Dataset,
    pub out_pool: Option<Dataset>,
    pub geometry: Geometry,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn gaussian_point(center: &[f64], spread: f64, rng: &mut impl Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, spread).expect("spread validated");
    center.iter().map(|c| c + normal.sample(rng)).collect()
}

fn place_means(count: usize, dim: usize, min_dist: f64, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    // Start from a tight box and widen it until the means fit, so feature
    // magnitudes stay on the order of the class separation.
    let mut half = min_dist * 0.1;
    for _ in 0..64 {
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(count);
        let mut tries = 0;
        while means.len() < count && tries < 20_000 {
            tries += 1;
            let cand: Vec<f64> = (0..dim).map(|_| rng.random_range(-half..=half)).collect();
            if means.iter().all(|m| dist(m, &cand) >= min_dist) {
                means.push(cand);
            }
        }
        if means.len() == count {
            return Ok(means);
        }
        half *= 1.1;
    }
    Err(Error::config("could not place well-separated class means"))
}

/// Generates a Gaussian-cluster classification task.
///
/// Benign classes are isotropic Gaussians around well-separated means. The
/// edge pool is a rare sub-cluster of `edge_parent` displaced by 4 spreads,
/// labeled as its parent; the out pool (label `class_count`) never appears in
/// the benign train or test sets.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = rng_from(seed);
    let spread = spec.cluster_spread;
    let min_dist = spec.mean_separation * spread;
    let total_means = spec.class_count + usize::from(spec.out_class_present);
    let mut means = place_means(total_means, spec.feature_dim, min_dist, &mut rng)?;
    let out_mean = spec.out_class_present.then(|| means.pop().expect("placed"));

    // Edge direction: the candidate whose centre stays farthest from all other classes.
    let parent = &means[spec.edge_parent];
    let mut edge_center = Vec::new();
    let mut best_clearance = f64::NEG_INFINITY;
    for _ in 0..64 {
        let dir: Vec<f64> = (0..spec.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue;
        }
        let cand: Vec<f64> = parent
            .iter()
            .zip(&dir)
            .map(|(p, d)| p + 4.0 * spread * d / norm)
            .collect();
        let clearance = means
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != spec.edge_parent)
            .map(|(_, m)| dist(m, &cand))
            .chain(out_mean.iter().map(|m| dist(m, &cand)))
            .fold(f64::INFINITY, f64::min);
        if clearance > best_clearance {
            best_clearance = clearance;
            edge_center = cand;
        }
    }

    let benign_classes = spec.class_count;
    let label_space = total_means;
    let mut train = Dataset::empty(spec.feature_dim, label_space);
    let mut test = Dataset::empty(spec.feature_dim, label_space);
    let trickle = (spec.edge_subpop_fraction * spec.samples_per_class as f64).round() as usize;
    for (class, mean) in means.iter().enumerate().take(benign_classes) {
        for k in 0..spec.samples_per_class {
            let center = if class == spec.edge_parent && k < trickle {
                &edge_center
            } else {
                mean
            };
            let x = gaussian_point(center, spread, &mut rng);
            let index = train.len();
            train.push(
                &x,
                class,
                Origin {
                    pool: Pool::Train,
                    index,
                },
            );
        }
    }
    for (class, mean) in means.iter().enumerate().take(benign_classes) {
        for _ in 0..spec.test_per_class {
            let x = gaussian_point(mean, spread, &mut rng);
            let index = test.len();
            test.push(
                &x,
                class,
                Origin {
                    pool: Pool::Test,
                    index,
                },
            );
        }
    }
    let mut edge_pool = Dataset::empty(spec.feature_dim, label_space);
    for index in 0..spec.edge_pool_size {
        let x = gaussian_point(&edge_center, spread, &mut rng);
        edge_pool.push(
            &x,
            spec.edge_parent,
            Origin {
                pool: Pool::Edge,
                index,
            },
        );
    }
    let out_pool = out_mean.as_ref().map(|m| {
        let mut pool = Dataset::empty(spec.feature_dim, label_space);
        for index in 0..spec.out_pool_size {
            let x = gaussian_point(m, spread, &mut rng);
            pool.push(&x, benign_classes, Origin { pool: Pool::Out, index });
        }
        pool
    });

    Ok(SyntheticData {
        train,
        test,
        edge_pool,
        out_pool,
        geometry: Geometry {
            class_means: means,
            edge_center,
            out_mean,
        },
    })
}

/// Example indices per client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn client_count(&self) -> usize {
        self.assignments.len()
    }

    pub fn materialize(&self, dataset: &Dataset) -> Vec<Dataset> {
        self.assignments.iter().map(|idx| dataset.subset(idx)).collect()
    }
}

fn dirichlet(alpha: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter().map(|d| d / sum).collect()
    } else {
        // Every gamma draw underflowed: all mass goes to one client.
        let mut p = vec![0.0; n];
        p[rng.random_range(0..n)] = 1.0;
        p
    }
}

/// Splits a dataset among `clients` with per-class Dirichlet(alpha) proportions.
pub fn dirichlet_partition(dataset: &Dataset, clients: usize, alpha: f64, seed: u64) -> Result<PartitionPlan> {
    if clients == 0 {
        return Err(Error::config("need at least one client"));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::config(format!("dirichlet alpha must be > 0, got {alpha}")));
    }
    if clients > dataset.len() {
        return Err(Error::config(format!(
            "{clients} clients but only {} examples",
            dataset.len()
        )));
    }
    let mut rng = rng_from(seed);
    let mut assignments = vec![Vec::new(); clients];
    for class in 0..dataset.class_count() {
        let mut idx = dataset.indices_of(class);
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let props = dirichlet(alpha, clients, &mut rng);
        let m = idx.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (client, p) in props.iter().enumerate() {
            cum += p;
            let end = if client + 1 == clients {
                m
            } else {
                ((cum * m as f64).round() as usize).clamp(start, m)
            };
            assignments[client].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    // Every client must be able to train.
    while let Some(empty) = assignments.iter().position(|a| a.is_empty()) {
        let largest = (0..clients)
            .max_by_key(|&c| (assignments[c].len(), std::cmp::Reverse(c)))
            .expect("clients >= 1");
        let moved = assignments[largest].pop().expect("largest client is non-empty");
        assignments[empty].push(moved);
    }
    for a in &mut assignments {
        a.sort_unstable();
    }
    Ok(PartitionPlan { assignments })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackdoorKind {
    /// Relabel examples of an in-distribution class.
    In,
    /// Relabel a rare sub-population of a class.
    Edge,
    /// Label a class absent from benign data as a benign class.
    Out,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackdoorSpec {
    pub kind: BackdoorKind,
    /// Class whose examples are relabeled (IN).
    pub target_class: usize,
    /// True label of the edge sub-population (EDGE).
    pub true_label: usize,
    /// Absent class whose examples carry the backdoor (OUT).
    pub out_class: usize,
    pub backdoor_label: usize,
    pub dataset_size: usize,
    pub malicious_fraction: f64,
}

impl BackdoorSpec {
    pub fn validate(&self, benign_classes: usize) -> Result<()> {
        if self.dataset_size == 0 {
            return Err(Error::config("backdoor dataset_size must be > 0"));
        }
        if !(self.malicious_fraction > 0.0 && self.malicious_fraction < 1.0) {
            return Err(Error::config("malicious_fraction must lie in (0, 1)"));
        }
        if self.backdoor_label >= benign_classes {
            return Err(Error::config("backdoor label must be a benign class"));
        }
        match self.kind {
            BackdoorKind::In if self.backdoor_label == self.target_class => {
                Err(Error::config("IN backdoor label must differ from the target class"))
            }
            BackdoorKind::In if self.target_class >= benign_classes => {
                Err(Error::config("IN target class must be a benign class"))
            }
            BackdoorKind::Edge if self.backdoor_label == self.true_label => {
                Err(Error::config("EDGE backdoor label must differ from the true label"))
            }
            BackdoorKind::Out if self.out_class < benign_classes => {
                Err(Error::config("OUT class must not be a benign class"))
            }
            _ => Ok(()),
        }
    }

    /// (benign, malicious) counts: benign is the ceiling of `(1 - fraction) * size`.
    pub fn split_counts(&self) -> (usize, usize) {
        let benign = ((1.0 - self.malicious_fraction) * self.dataset_size as f64 - 1e-9).ceil() as usize;
        let benign = benign.min(self.dataset_size);
        (benign, self.dataset_size - benign)
    }
}

/// Sources the backdoor builders draw from.
///
/// Edge and out pools are split in half: the first half feeds the attacker's
/// training set, the second half the backdoor test set. IN test instances come
/// from the benign test set, IN training instances from the train set.
#[derive(Debug, Clone, Copy)]
pub struct BackdoorPools<'a> {
    /// Number of benign classes; labels at or above it are out-of-distribution.
    pub benign_classes: usize,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub edge: &'a Dataset,
    pub out: Option<&'a Dataset>,
}

fn pool_halves(pool: &Dataset) -> (Vec<usize>, Vec<usize>) {
    let half = pool.len() / 2;
    ((0..half).collect(), (half..pool.len()).collect())
}

fn draw(candidates: &[usize], count: usize, rng: &mut impl Rng, what: &str) -> Result<Vec<usize>> {
    if candidates.len() < count {
        return Err(Error::data(format!(
            "need {count} {what} examples, only {} available",
            candidates.len()
        )));
    }
    let mut c = candidates.to_vec();
    c.shuffle(rng);
    c.truncate(count);
    Ok(c)
}

fn malicious_sources<'a>(
    spec: &BackdoorSpec,
    pools: &BackdoorPools<'a>,
    for_test: bool,
) -> Result<(&'a Dataset, Vec<usize>)> {
    Ok(match spec.kind {
        BackdoorKind::In => {
            let src = if for_test { pools.test } else { pools.train };
            (src, src.indices_of(spec.target_class))
        }
        BackdoorKind::Edge => {
            let (train, test) = pool_halves(pools.edge);
            (pools.edge, if for_test { test } else { train })
        }
        BackdoorKind::Out => {
            let pool = pools
                .out
                .ok_or_else(|| Error::data("OUT backdoor requires an out-of-distribution pool"))?;
            let (train, test) = pool_halves(pool);
            (pool, if for_test { test } else { train })
        }
    })
}

/// Builds the attacker's mixed dataset: correctly labeled benign examples plus
/// backdoor instances carrying `backdoor_label`.
pub fn build_backdoor_dataset(pools: &BackdoorPools<'_>, spec: &BackdoorSpec, seed: u64) -> Result<Dataset> {
    spec.validate(pools.benign_classes)?;
    let (benign_n, malicious_n) = spec.split_counts();
    let mut rng = rng_from(seed);
    let train = pools.train;

    let benign_candidates: Vec<usize> = (0..train.len())
        .filter(|&i| !(spec.kind == BackdoorKind::In && train.label(i) == spec.target_class))
        .collect();
    let benign_idx = draw(&benign_candidates, benign_n, &mut rng, "benign")?;
    let (src, candidates) = malicious_sources(spec, pools, false)?;
    let mal_idx = draw(&candidates, malicious_n, &mut rng, "backdoor")?;

    let mut out = Dataset::empty(train.feature_dim(), train.class_count());
    for i in benign_idx {
        out.push(train.features(i), train.label(i), train.origin(i));
    }
    for i in mal_idx {
        out.push(src.features(i), spec.backdoor_label, src.origin(i));
    }
    Ok(out)
}

/// Held-out backdoor instances, all labeled `backdoor_label`.
pub fn backdoor_test_set(spec: &BackdoorSpec, pools: &BackdoorPools<'_>, size: usize, seed: u64) -> Result<Dataset> {
    spec.validate(pools.benign_classes)?;
    if size == 0 {
        return Err(Error::config("backdoor test size must be > 0"));
    }
    let mut rng = rng_from(seed);
    let (src, candidates) = malicious_sources(spec, pools, true)?;
    let idx = draw(&candidates, size, &mut rng, "backdoor test")?;
    let mut out = Dataset::empty(src.feature_dim(), pools.train.class_count());
    for i in idx {
        out.push(src.features(i), spec.backdoor_label, src.origin(i));
    }
    Ok(out)
}

/// Drops every example of `class`, keeping the order of the rest.
pub fn strip_class(dataset: &Dataset, class: usize) -> Dataset {
    let keep: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.label(i) != class).collect();
    dataset.subset(&keep)
}

/// Reads `f0,...,f{d-1},label` rows with a header line.
pub fn load_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut lines = String::new();
    let mut reader = reader;
    reader
        .read_to_string(&mut lines)
        .map_err(|e| Error::data(format!("reading csv: {e}")))?;
    let mut it = lines.lines().enumerate();
    let (_, header) = it.next().ok_or_else(|| Error::data("csv is empty"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols.last() != Some(&"label") {
        return Err(Error::data("csv header must be f0,...,f{d-1},label"));
    }
    let dim = cols.len() - 1;
    for (lineno, line) in it {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 1 {
            return Err(Error::data(format!(
                "line {}: expected {} fields, got {}",
                lineno + 1,
                dim + 1,
                fields.len()
            )));
        }
        let feats = fields[..dim]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::data(format!("line {}: {e}", lineno + 1)))?;
        let label = fields[dim]
            .parse::<usize>()
            .map_err(|e| Error::data(format!("line {}: label: {e}", lineno + 1)))?;
        rows.push((feats, label));
    }
    let classes = rows.iter().map(|(_, l)| l + 1).max().unwrap_or(0);
    let mut ds = Dataset::empty(dim, classes.max(1));
    for (index, (f, l)) in rows.iter().enumerate() {
        ds.push(
            f,
            *l,
            Origin {
                pool: Pool::External,
                index,
            },
        );
    }
    Ok(ds)
}
