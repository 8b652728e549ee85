//! Radius neighbourhoods in feature space and the adjacency discrepancy score.
//!
//! For an anchor `i` with neighbours `N(i)` (and `A(i) = {i} ∪ N(i)`):
//!
//! * sharpness: mean over `A(i)` of `ln(S_j / max α_j − 1)`
//! * divergence: mean over `N(i)` of `‖p_i − p_j‖₁`
//! * conflict: `Σ_c |p_ic − p_kc| · (1 − u_i)(1 − u_k)`
//!
//! and `d_ik` is their product. Neighbours with `d_ik < ε` are positives,
//! the rest negatives.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::{DirichletOpinion, LOG_FLOOR};
use crate::tensor::Tensor;

/// How the neighbourhood radius is chosen for a batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RadiusPolicy {
    Fixed { radius: f64 },
    /// Smallest pair distance that gives every anchor `target` neighbours on
    /// average (ties may add a few more).
    Adaptive { target: f64 },
}

impl Default for RadiusPolicy {
    fn default() -> Self {
        RadiusPolicy::Adaptive { target: 10.0 }
    }
}

impl RadiusPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RadiusPolicy::Fixed { radius } if !(radius >= 0.0) || !radius.is_finite() => {
                Err(Error::Config(format!("radius must be finite and >= 0, got {radius}")))
            }
            RadiusPolicy::Adaptive { target } if !(target > 0.0) || !target.is_finite() => {
                Err(Error::Config(format!("adaptive radius target must be > 0, got {target}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacencySet {
    pub anchor: usize,
    /// Sorted, never contains `anchor`.
    pub neighbors: Vec<usize>,
    pub radius: f64,
}

impl AdjacencySet {
    /// The anchor followed by its neighbours.
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.anchor).chain(self.neighbors.iter().copied())
    }

    pub fn contains(&self, k: usize) -> bool {
        self.neighbors.binary_search(&k).is_ok()
    }
}

/// Row-major `n×n` Euclidean distance matrix.
pub fn pairwise_distances(features: &Tensor) -> Vec<f64> {
    let (n, d) = features.dims2();
    let x = features.values();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let sq: f64 = (0..d).map(|c| (x[i * d + c] - x[j * d + c]).powi(2)).sum();
            let dist = sq.sqrt();
            out[i * n + j] = dist;
            out[j * n + i] = dist;
        }
    }
    out
}

fn resolve_radius(distances: &[f64], n: usize, policy: RadiusPolicy) -> f64 {
    match policy {
        RadiusPolicy::Fixed { radius } => radius,
        RadiusPolicy::Adaptive { target } => {
            let mut pairs: Vec<f64> = (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .map(|(i, j)| distances[i * n + j])
                .collect();
            if pairs.is_empty() {
                return 0.0;
            }
            pairs.sort_by(f64::total_cmp);
            // Each unordered pair contributes one neighbour to two anchors.
            let wanted = (target * n as f64 / 2.0).ceil().max(1.0) as usize;
            pairs[wanted.min(pairs.len()) - 1]
        }
    }
}

pub fn build_adjacency(features: &Tensor, policy: RadiusPolicy) -> Result<Vec<AdjacencySet>> {
    policy.validate()?;
    let (n, _) = features.dims2();
    if n == 0 || features.is_empty() {
        return Err(Error::Contract("adjacency needs at least one sample".into()));
    }
    let distances = pairwise_distances(features);
    let radius = resolve_radius(&distances, n, policy);
    Ok((0..n)
        .map(|i| AdjacencySet {
            anchor: i,
            neighbors: (0..n).filter(|&j| j != i && distances[i * n + j] <= radius).collect(),
            radius,
        })
        .collect())
}

fn max_alpha(op: &DirichletOpinion) -> f64 {
    op.alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn sharpness(set: &AdjacencySet, opinions: &[DirichletOpinion]) -> f64 {
    let total: f64 = set
        .members()
        .map(|j| {
            let op = &opinions[j];
            (op.strength / max_alpha(op) - 1.0).max(LOG_FLOOR).ln()
        })
        .sum();
    total / (set.neighbors.len() + 1) as f64
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn divergence(set: &AdjacencySet, opinions: &[DirichletOpinion]) -> f64 {
    if set.neighbors.is_empty() {
        return 0.0;
    }
    let p = &opinions[set.anchor].probability;
    let total: f64 = set.neighbors.iter().map(|&j| l1(p, &opinions[j].probability)).sum();
    total / set.neighbors.len() as f64
}

pub fn conflict(a: &DirichletOpinion, b: &DirichletOpinion) -> f64 {
    // Confidence product first so the result is exactly symmetric.
    l1(&a.probability, &b.probability) * ((1.0 - a.uncertainty) * (1.0 - b.uncertainty))
}

/// Which factors enter the score. A disabled factor is replaced by 1;
/// `Zero` forces every score to 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdsVariant {
    #[default]
    Full,
    NoSharp,
    NoDiv,
    NoConf,
    Zero,
}

impl AdsVariant {
    fn combine(self, sharp: f64, div: f64, conf: f64) -> f64 {
        match self {
            AdsVariant::Full => sharp * div * conf,
            AdsVariant::NoSharp => div * conf,
            AdsVariant::NoDiv => sharp * conf,
            AdsVariant::NoConf => sharp * div,
            AdsVariant::Zero => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRecord {
    pub anchor: usize,
    pub neighbor: usize,
    pub sharp: f64,
    pub div: f64,
    pub conf: f64,
    pub ads: f64,
}

pub fn ads(anchor: usize, neighbor: usize, opinions: &[DirichletOpinion], adjacency: &[AdjacencySet]) -> Result<DiscrepancyRecord> {
    ads_with(anchor, neighbor, opinions, adjacency, AdsVariant::Full)
}

pub fn ads_with(
    anchor: usize,
    neighbor: usize,
    opinions: &[DirichletOpinion],
    adjacency: &[AdjacencySet],
    variant: AdsVariant,
) -> Result<DiscrepancyRecord> {
    let set = adjacency
        .get(anchor)
        .filter(|s| s.anchor == anchor)
        .ok_or_else(|| Error::Contract(format!("no adjacency set for anchor {anchor}")))?;
    if !set.contains(neighbor) {
        return Err(Error::Contract(format!("{neighbor} is not a neighbor of {anchor}")));
    }
    let sharp = sharpness(set, opinions);
    let div = divergence(set, opinions);
    let conf = conflict(&opinions[anchor], &opinions[neighbor]);
    Ok(DiscrepancyRecord { anchor, neighbor, sharp, div, conf, ads: variant.combine(sharp, div, conf) })
}

/// Threshold splitting neighbours into positives (`d < ε`) and negatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EpsilonPolicy {
    /// Median of every score in the batch.
    #[default]
    Median,
    Fixed { epsilon: f64 },
}

impl EpsilonPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EpsilonPolicy::Fixed { epsilon } if !epsilon.is_finite() => {
                Err(Error::Config(format!("epsilon must be finite, got {epsilon}")))
            }
            _ => Ok(()),
        }
    }

    /// Zero for a batch without any neighbour pairs.
    pub fn resolve(&self, scores: &[f64]) -> f64 {
        match *self {
            EpsilonPolicy::Fixed { epsilon } => epsilon,
            EpsilonPolicy::Median => median(scores).unwrap_or(0.0),
        }
    }
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl Partition {
    pub fn is_empty(&self) -> bool {
        self.positive.is_empty() && self.negative.is_empty()
    }
}

/// Splits one anchor's records by the strict-less rule.
pub fn partition_neighbors(records: &[DiscrepancyRecord], epsilon: f64) -> Partition {
    let mut out = Partition::default();
    for r in records {
        if r.ads < epsilon {
            out.positive.push(r.neighbor);
        } else {
            out.negative.push(r.neighbor);
        }
    }
    out
}

/// Scores and partitions for every anchor of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscrepancyBatch {
    pub adjacency: Vec<AdjacencySet>,
    /// Grouped by anchor, neighbours ascending.
    pub records: Vec<DiscrepancyRecord>,
    pub epsilon: f64,
    pub partitions: Vec<Partition>,
}

pub fn score_batch(
    opinions: &[DirichletOpinion],
    adjacency: Vec<AdjacencySet>,
    variant: AdsVariant,
    epsilon: EpsilonPolicy,
) -> Result<DiscrepancyBatch> {
    if opinions.len() != adjacency.len() {
        return Err(Error::shape("score_batch", &[opinions.len()], &[adjacency.len()]));
    }
    let mut records = Vec::new();
    let mut spans = Vec::with_capacity(adjacency.len());
    for set in &adjacency {
        let start = records.len();
        for &k in &set.neighbors {
            records.push(ads_with(set.anchor, k, opinions, &adjacency, variant)?);
        }
        spans.push(start..records.len());
    }
    let scores: Vec<f64> = records.iter().map(|r| r.ads).collect();
    let eps = epsilon.resolve(&scores);
    let partitions = spans.into_iter().map(|s| partition_neighbors(&records[s], eps)).collect();
    Ok(DiscrepancyBatch { adjacency, records, epsilon: eps, partitions })
}

#[derive(Serialize)]
struct CsvRow {
    anchor: usize,
    neighbor: usize,
    sharp: f64,
    div: f64,
    conf: f64,
    ads: f64,
    partition: &'static str,
}

impl DiscrepancyBatch {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(CsvRow {
                anchor: r.anchor,
                neighbor: r.neighbor,
                sharp: r.sharp,
                div: r.div,
                conf: r.conf,
                ads: r.ads,
                partition: if r.ads < self.epsilon { "positive" } else { "negative" },
            })?;
        }
        w.flush()?;
        Ok(())
    }
}
