//! Debiased router and the discrepancy-aware merging objective.
//!
//! The router maps pooled base-backbone features to softmax merge weights
//! over task vectors, either one block of `K` (task-wise) or one block per
//! layer (layer-wise). Training minimises
//! `L_BD = L_Unsup + η · L_Dis` on unlabeled data, where `L_Unsup` is the
//! prediction entropy of the routed model and `L_Dis` a contrastive loss whose
//! positives and negatives come from frozen discrepancy partitions.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adjacency::{build_adjacency, score_batch, AdsVariant, DiscrepancyBatch, EpsilonPolicy, Partition, RadiusPolicy};
use crate::archive::{merge_parameters, ArchiveEntry, MergeMode, MergeWeights, ParameterArchive, TaskVector};
use crate::error::{Error, Result};
use crate::evidential::{EvidentialHead, LOG_FLOOR};
use crate::nn::{load_deltas, sgd_step, shuffled, MlpSpec};
use crate::rng::{substream, Rng};
use crate::tensor::{softmax_slice, Tape, Tensor, Var};

/// Clamp applied to contrastive log arguments.
pub const CLAMP_DELTA: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct RouterNet {
    pub mode: MergeMode,
    pub task_count: usize,
    pub layer_count: usize,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Router parameters placed on a tape.
#[derive(Clone, Copy, Debug)]
pub struct RouterVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl RouterVars {
    pub fn all(&self) -> [Var; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

fn block_count(mode: MergeMode, layer_count: usize) -> usize {
    match mode {
        MergeMode::TaskWise => 1,
        MergeMode::LayerWise => layer_count,
    }
}

impl RouterNet {
    /// Glorot-normal first layer; the output layer starts at zero so every
    /// sample is first routed to the uniform merge.
    pub fn new(
        input_dim: usize,
        hidden: usize,
        task_count: usize,
        layer_count: usize,
        mode: MergeMode,
        rng: &mut Rng,
    ) -> Result<Self> {
        if task_count == 0 {
            return Err(Error::Contract("router needs at least one task vector".into()));
        }
        if input_dim == 0 || hidden == 0 || layer_count == 0 {
            return Err(Error::Contract("router dimensions must be positive".into()));
        }
        let std = (2.0 / (input_dim + hidden) as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let w1 = (0..input_dim * hidden).map(|_| normal.sample(rng)).collect();
        let out = task_count * block_count(mode, layer_count);
        Ok(RouterNet {
            mode,
            task_count,
            layer_count,
            w1: Tensor::new(vec![input_dim, hidden], w1)?,
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, out]),
            b2: Tensor::zeros(&[out]),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.task_count * block_count(self.mode, self.layer_count)
    }

    pub fn params(&self) -> [Tensor; 4] {
        [self.w1.clone(), self.b1.clone(), self.w2.clone(), self.b2.clone()]
    }

    fn set_params(&mut self, params: [Tensor; 4]) {
        let [w1, b1, w2, b2] = params;
        self.w1 = w1;
        self.b1 = b1;
        self.w2 = w2;
        self.b2 = b2;
        for t in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            t.clear_grad();
        }
    }

    pub fn load(&self, tape: &mut Tape, trainable: bool) -> RouterVars {
        let mut put = |t: &Tensor| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        RouterVars { w1: put(&self.w1), b1: put(&self.b1), w2: put(&self.w2), b2: put(&self.b2) }
    }

    pub fn logits_on_tape(&self, tape: &mut Tape, vars: &RouterVars, features: Var) -> Result<Var> {
        if tape.value(features).cols() != self.input_dim() {
            return Err(Error::shape("router input", tape.value(features).shape(), self.w1.shape()));
        }
        let h = tape.linear(features, vars.w1, vars.b1)?;
        let h = tape.tanh(h);
        tape.linear(h, vars.w2, vars.b2)
    }

    /// One `[m × K]` weight node per network layer. Task-wise routing
    /// repeats the same node.
    pub fn weights_on_tape(&self, tape: &mut Tape, vars: &RouterVars, features: Var) -> Result<Vec<Var>> {
        let logits = self.logits_on_tape(tape, vars, features)?;
        let k = self.task_count;
        match self.mode {
            MergeMode::TaskWise => {
                let w = tape.softmax_rows(logits)?;
                Ok(vec![w; self.layer_count])
            }
            MergeMode::LayerWise => (0..self.layer_count)
                .map(|l| {
                    let block = tape.slice_cols(logits, l * k, (l + 1) * k)?;
                    tape.softmax_rows(block)
                })
                .collect(),
        }
    }

    /// Per-sample merge weights.
    pub fn route(&self, features: &Tensor) -> Result<Vec<MergeWeights>> {
        let mut tape = Tape::new();
        let vars = self.load(&mut tape, false);
        let x = tape.constant(features.clone());
        let logits = self.logits_on_tape(&mut tape, &vars, x)?;
        let logits = tape.value(logits);
        let k = self.task_count;
        (0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                match self.mode {
                    MergeMode::TaskWise => Ok(MergeWeights::task_wise(softmax_slice(row))),
                    MergeMode::LayerWise => {
                        let blocks: Vec<Vec<f64>> = row.chunks(k).map(softmax_slice).collect();
                        let w = (0..k).flat_map(|t| blocks.iter().map(move |b| b[t])).collect();
                        MergeWeights::layer_wise(k, self.layer_count, w)
                    }
                }
            })
            .collect()
    }

    /// Logits of the per-sample routed model on `inputs`.
    pub fn merged_logits(
        &self,
        spec: &MlpSpec,
        base: &ParameterArchive,
        vectors: &[TaskVector],
        inputs: &Tensor,
    ) -> Result<Tensor> {
        check_vectors(self, vectors, spec)?;
        let features = spec.pooled_features(base, inputs)?;
        let mut tape = Tape::new();
        let vars = self.load(&mut tape, false);
        let f = tape.constant(features);
        let weights = self.weights_on_tape(&mut tape, &vars, f)?;
        let base_layers = spec.load(&mut tape, base, false)?;
        let deltas = load_deltas(spec, &mut tape, vectors)?;
        let x = tape.constant(inputs.clone());
        let out = spec.routed_forward(&mut tape, &base_layers, &deltas, &weights, x)?;
        Ok(tape.value(out.logits).clone())
    }

    pub fn to_archive(&self) -> ParameterArchive {
        let entries = vec![
            ArchiveEntry::new("router.layer0.weight", 0, self.w1.clone()),
            ArchiveEntry::new("router.layer0.bias", 0, self.b1.clone()),
            ArchiveEntry::new("router.layer1.weight", 1, self.w2.clone()),
            ArchiveEntry::new("router.layer1.bias", 1, self.b2.clone()),
        ];
        ParameterArchive::new(entries)
            .expect("router entry names are distinct")
            .with_metadata("role", "router")
            .with_metadata("mode", self.mode.as_str())
            .with_metadata("task_count", self.task_count.to_string())
            .with_metadata("layer_count", self.layer_count.to_string())
    }

    pub fn from_archive(archive: &ParameterArchive) -> Result<Self> {
        let meta = |key: &str| {
            archive.metadata().get(key).cloned().ok_or_else(|| Error::Format {
                entry: None,
                detail: format!("router archive lacks metadata {key:?}"),
            })
        };
        if meta("role")? != "router" {
            return Err(Error::Format { entry: None, detail: "archive is not a router".into() });
        }
        let mode = match meta("mode")?.as_str() {
            "task" => MergeMode::TaskWise,
            "layer" => MergeMode::LayerWise,
            other => {
                return Err(Error::Format { entry: None, detail: format!("unknown router mode {other:?}") })
            }
        };
        let count = |key: &str| -> Result<usize> {
            meta(key)?.parse().map_err(|_| Error::Format { entry: None, detail: format!("bad {key}") })
        };
        let get = |name: &str| {
            archive.get(name).cloned().ok_or_else(|| Error::Layout { entry: name.into(), detail: "missing".into() })
        };
        let router = RouterNet {
            mode,
            task_count: count("task_count")?,
            layer_count: count("layer_count")?,
            w1: get("router.layer0.weight")?,
            b1: get("router.layer0.bias")?,
            w2: get("router.layer1.weight")?,
            b2: get("router.layer1.bias")?,
        };
        let hidden = router.w1.cols();
        let consistent = router.w1.shape().len() == 2
            && router.b1.shape() == [hidden]
            && router.w2.shape() == [hidden, router.output_dim()]
            && router.b2.shape() == [router.output_dim()];
        if !consistent {
            return Err(Error::Layout { entry: "router".into(), detail: "inconsistent router shapes".into() });
        }
        Ok(router)
    }
}

fn check_vectors(router: &RouterNet, vectors: &[TaskVector], spec: &MlpSpec) -> Result<()> {
    if vectors.len() != router.task_count {
        return Err(Error::Contract(format!(
            "router expects {} task vectors, got {}",
            router.task_count,
            vectors.len()
        )));
    }
    if router.layer_count != spec.layer_count() {
        return Err(Error::Contract(format!(
            "router built for {} layers, network has {}",
            router.layer_count,
            spec.layer_count()
        )));
    }
    Ok(())
}

/// Unit-normalised merged outputs plus the frozen neighbour partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    pub z: Tensor,
    pub partitions: Vec<Partition>,
    pub temperature: f64,
}

impl ContrastiveBatch {
    /// Normalises the rows of `outputs`.
    pub fn new(outputs: &Tensor, partitions: Vec<Partition>, temperature: f64) -> Result<Self> {
        let (m, c) = outputs.dims2();
        if partitions.len() != m {
            return Err(Error::shape("contrastive partitions", &[m], &[partitions.len()]));
        }
        if partitions.iter().flat_map(|p| p.positive.iter().chain(&p.negative)).any(|&j| j >= m) {
            return Err(Error::Contract("partition refers to a sample outside the batch".into()));
        }
        if !(temperature > 0.0) {
            return Err(Error::Contract(format!("temperature must be > 0, got {temperature}")));
        }
        let mut z = Vec::with_capacity(m * c);
        for i in 0..m {
            let row = outputs.row(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            z.extend(row.iter().map(|v| v / norm));
        }
        Ok(ContrastiveBatch { z: Tensor::new(vec![m, c], z)?, partitions, temperature })
    }

    fn similarity(&self, i: usize, j: usize) -> f64 {
        let d: f64 = self.z.row(i).iter().zip(self.z.row(j)).map(|(a, b)| a * b).sum();
        (d / self.temperature).exp()
    }

    fn mass(&self, i: usize, set: &[usize]) -> f64 {
        set.iter().map(|&j| self.similarity(i, j)).sum()
    }
}

pub fn partition_function(anchor: usize, batch: &ContrastiveBatch) -> Result<f64> {
    let p = &batch.partitions[anchor];
    if p.is_empty() {
        return Err(Error::Contract(format!("anchor {anchor} has no neighbours")));
    }
    Ok(batch.mass(anchor, &p.positive) + batch.mass(anchor, &p.negative))
}

/// Contrastive loss of one anchor; zero without neighbours.
pub fn anchor_loss(anchor: usize, batch: &ContrastiveBatch) -> f64 {
    let p = &batch.partitions[anchor];
    if p.is_empty() {
        return 0.0;
    }
    let pos = batch.mass(anchor, &p.positive);
    let neg = batch.mass(anchor, &p.negative);
    let z = pos + neg;
    let arg = if p.positive.is_empty() { 1.0 - neg / z } else { pos / z };
    -arg.clamp(CLAMP_DELTA, 1.0).ln()
}

pub fn loss_discrepancy(batch: &ContrastiveBatch) -> f64 {
    (0..batch.partitions.len()).map(|i| anchor_loss(i, batch)).sum()
}

/// Tape form of [`loss_discrepancy`]; `outputs` is normalised here.
pub fn loss_discrepancy_on_tape(
    tape: &mut Tape,
    outputs: Var,
    partitions: &[Partition],
    temperature: f64,
) -> Result<Var> {
    let m = tape.value(outputs).rows();
    if partitions.len() != m {
        return Err(Error::shape("contrastive partitions", &[m], &[partitions.len()]));
    }
    let mut pos_mask = vec![0.0; m * m];
    let mut neg_mask = vec![0.0; m * m];
    let (mut first, mut second, mut idle) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for (i, p) in partitions.iter().enumerate() {
        for &j in &p.positive {
            pos_mask[i * m + j] = 1.0;
        }
        for &j in &p.negative {
            neg_mask[i * m + j] = 1.0;
        }
        match (p.positive.is_empty(), p.negative.is_empty()) {
            (true, true) => idle[i] = 1.0,
            (true, false) => second[i] = 1.0,
            (false, _) => first[i] = 1.0,
        }
    }
    let z = tape.normalize_rows(outputs)?;
    let zt = tape.transpose(z)?;
    let sim = tape.matmul(z, zt)?;
    let sim = tape.scale(sim, 1.0 / temperature);
    let e = tape.exp(sim);
    let pos_mask = tape.constant(Tensor::new(vec![m, m], pos_mask)?);
    let neg_mask = tape.constant(Tensor::new(vec![m, m], neg_mask)?);
    let pos = tape.mul(e, pos_mask)?;
    let pos = tape.sum_rows(pos);
    let neg = tape.mul(e, neg_mask)?;
    let neg = tape.sum_rows(neg);
    // Idle anchors get Z = 1 and a log argument of exactly 1.
    let idle = tape.constant(Tensor::vector(idle));
    let z_sum = tape.add(pos, neg)?;
    let z_sum = tape.add(z_sum, idle)?;
    let pos_ratio = tape.div(pos, z_sum)?;
    let neg_ratio = tape.div(neg, z_sum)?;
    let one_minus = tape.scale(neg_ratio, -1.0);
    let one_minus = tape.add_scalar(one_minus, 1.0);
    let first = tape.constant(Tensor::vector(first));
    let second = tape.constant(Tensor::vector(second));
    let a = tape.mul(first, pos_ratio)?;
    let b = tape.mul(second, one_minus)?;
    let arg = tape.add(a, b)?;
    let arg = tape.add(arg, idle)?;
    let arg = tape.clamp(arg, CLAMP_DELTA, 1.0);
    let logs = tape.ln(arg, CLAMP_DELTA);
    let total = tape.sum(logs);
    Ok(tape.neg(total))
}

/// Summed Shannon entropy of probability rows.
pub fn loss_unsup(probabilities: &Tensor) -> f64 {
    probabilities.values().iter().map(|&q| -q * q.max(LOG_FLOOR).ln()).sum()
}

/// Tape form of [`loss_unsup`] on logits.
pub fn loss_unsup_on_tape(tape: &mut Tape, logits: Var) -> Result<Var> {
    let q = tape.softmax_rows(logits)?;
    let lq = tape.ln(q, LOG_FLOOR);
    let plq = tape.mul(q, lq)?;
    let total = tape.sum(plq);
    Ok(tape.neg(total))
}

pub fn loss_bd(unsup: f64, dis: f64, eta: f64) -> f64 {
    unsup + eta * dis
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BDConfig {
    pub eta: f64,
    pub temperature: f64,
    pub epsilon: EpsilonPolicy,
    pub radius: RadiusPolicy,
    pub mode: MergeMode,
    pub ads_variant: AdsVariant,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Set from the run seed, never from configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for BDConfig {
    fn default() -> Self {
        BDConfig {
            eta: 0.1,
            temperature: 0.5,
            epsilon: EpsilonPolicy::Median,
            radius: RadiusPolicy::default(),
            mode: MergeMode::LayerWise,
            ads_variant: AdsVariant::Full,
            hidden: 32,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

impl BDConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("batch size and router width must be positive".into()));
        }
        self.epsilon.validate()?;
        self.radius.validate()
    }
}

/// Per-sample means of the objective over one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub l_unsup: f64,
    pub l_dis: f64,
    pub l_bd: f64,
}

pub fn write_loss_trace<W: Write>(trace: &[LossRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// A mini-batch of auxiliary samples with partitions fixed before training.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenBatch {
    pub indices: Vec<usize>,
    /// Local to `indices`.
    pub partitions: Vec<Partition>,
    pub epsilon: f64,
}

/// Splits `aux` into seeded batches and scores each once with `head`.
pub fn freeze_batches(
    spec: &MlpSpec,
    base: &ParameterArchive,
    head: &EvidentialHead,
    aux: &Tensor,
    config: &BDConfig,
) -> Result<Vec<FrozenBatch>> {
    Ok(score_aux_batches(spec, base, head, aux, config)?
        .into_iter()
        .map(|(indices, scored)| FrozenBatch { indices, partitions: scored.partitions, epsilon: scored.epsilon })
        .collect())
}

/// The seeded auxiliary batches with their full discrepancy records.
pub fn score_aux_batches(
    spec: &MlpSpec,
    base: &ParameterArchive,
    head: &EvidentialHead,
    aux: &Tensor,
    config: &BDConfig,
) -> Result<Vec<(Vec<usize>, DiscrepancyBatch)>> {
    let features = spec.pooled_features(base, aux)?;
    let opinions = head.opinions(&features)?;
    let mut rng = substream(config.seed, "router-batches");
    let order = shuffled(features.rows(), &mut rng);
    order
        .chunks(config.batch_size)
        .map(|idx| {
            let adjacency = build_adjacency(&features.select_rows(idx), config.radius)?;
            let local: Vec<_> = idx.iter().map(|&i| opinions[i].clone()).collect();
            Ok((idx.to_vec(), score_batch(&local, adjacency, config.ads_variant, config.epsilon)?))
        })
        .collect()
}

pub struct TrainedRouter {
    pub router: RouterNet,
    pub trace: Vec<LossRecord>,
    pub batches: Vec<FrozenBatch>,
}

/// Scores the auxiliary data once, then optimises the router on `L_BD`
/// with the base, task vectors and partitions frozen.
pub fn train_bd_merging(
    spec: &MlpSpec,
    base: &ParameterArchive,
    vectors: &[TaskVector],
    aux: &Tensor,
    head: &EvidentialHead,
    config: &BDConfig,
) -> Result<TrainedRouter> {
    config.validate()?;
    if vectors.is_empty() {
        return Err(Error::Contract("BD-Merging needs at least one task vector".into()));
    }
    let batches = freeze_batches(spec, base, head, aux, config)?;
    let mut init = substream(config.seed, "router-init");
    let router = RouterNet::new(spec.pooled_dim(), config.hidden, vectors.len(), spec.layer_count(), config.mode, &mut init)?;
    let features = spec.pooled_features(base, aux)?;
    let (router, trace) = optimise_router(spec, base, vectors, aux, &features, &batches, router, config)?;
    Ok(TrainedRouter { router, trace, batches })
}

#[allow(clippy::too_many_arguments)]
fn optimise_router(
    spec: &MlpSpec,
    base: &ParameterArchive,
    vectors: &[TaskVector],
    aux: &Tensor,
    features: &Tensor,
    batches: &[FrozenBatch],
    mut router: RouterNet,
    config: &BDConfig,
) -> Result<(RouterNet, Vec<LossRecord>)> {
    check_vectors(&router, vectors, spec)?;
    let mut rng = substream(config.seed, "router-training");
    let n = aux.rows().max(1) as f64;
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (mut unsup_sum, mut dis_sum) = (0.0, 0.0);
        for (batch, &b) in shuffled(batches.len(), &mut rng).iter().enumerate() {
            let fb = &batches[b];
            let mut tape = Tape::new();
            let vars = router.load(&mut tape, true);
            let f = tape.constant(features.select_rows(&fb.indices));
            let x = tape.constant(aux.select_rows(&fb.indices));
            let (unsup, dis) = bd_terms(&mut tape, spec, base, vectors, &router, &vars, f, x, &fb.partitions, config)?;
            let (u, d) = (tape.scalar_value(unsup), tape.scalar_value(dis));
            let value = loss_bd(u, d, config.eta);
            if !value.is_finite() {
                return Err(Error::NonFinite { stage: "train_router", epoch, batch, value });
            }
            unsup_sum += u;
            dis_sum += d;
            let scaled = tape.scale(dis, config.eta);
            let total = tape.add(unsup, scaled)?;
            let grads = tape.backward(total)?;
            let mut params = router.params();
            sgd_step(&mut params, &vars.all(), &grads, config.learning_rate);
            router.set_params(params);
        }
        trace.push(LossRecord {
            epoch,
            l_unsup: unsup_sum / n,
            l_dis: dis_sum / n,
            l_bd: loss_bd(unsup_sum, dis_sum, config.eta) / n,
        });
    }
    Ok((router, trace))
}

/// Builds `(L_Unsup, L_Dis)` for one batch on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn bd_terms(
    tape: &mut Tape,
    spec: &MlpSpec,
    base: &ParameterArchive,
    vectors: &[TaskVector],
    router: &RouterNet,
    vars: &RouterVars,
    features: Var,
    inputs: Var,
    partitions: &[Partition],
    config: &BDConfig,
) -> Result<(Var, Var)> {
    let weights = router.weights_on_tape(tape, vars, features)?;
    let base_layers = spec.load(tape, base, false)?;
    let deltas = load_deltas(spec, tape, vectors)?;
    let out = spec.routed_forward(tape, &base_layers, &deltas, &weights, inputs)?;
    let unsup = loss_unsup_on_tape(tape, out.logits)?;
    let dis = loss_discrepancy_on_tape(tape, out.logits, partitions, config.temperature)?;
    Ok((unsup, dis))
}

/// Objective of `router` over frozen batches, without updating anything.
pub fn evaluate_bd_objective(
    spec: &MlpSpec,
    base: &ParameterArchive,
    vectors: &[TaskVector],
    aux: &Tensor,
    router: &RouterNet,
    batches: &[FrozenBatch],
    config: &BDConfig,
) -> Result<f64> {
    let features = spec.pooled_features(base, aux)?;
    let mut total = 0.0;
    for fb in batches {
        let mut tape = Tape::new();
        let vars = router.load(&mut tape, false);
        let f = tape.constant(features.select_rows(&fb.indices));
        let x = tape.constant(aux.select_rows(&fb.indices));
        let (u, d) = bd_terms(&mut tape, spec, base, vectors, router, &vars, f, x, &fb.partitions, config)?;
        total += loss_bd(tape.scalar_value(u), tape.scalar_value(d), config.eta);
    }
    Ok(total / aux.rows().max(1) as f64)
}

/// One global set of merge weights trained on `L_Unsup` alone, with the same
/// batches, epochs and step size as the router.
pub fn train_static_adaptive(
    spec: &MlpSpec,
    base: &ParameterArchive,
    vectors: &[TaskVector],
    aux: &Tensor,
    config: &BDConfig,
) -> Result<(MergeWeights, Vec<LossRecord>)> {
    config.validate()?;
    let k = vectors.len();
    if k == 0 {
        return Err(Error::Contract("static merging needs at least one task vector".into()));
    }
    let layers = spec.layer_count();
    let blocks = block_count(config.mode, layers);
    let mut logits = Tensor::zeros(&[blocks, k]);
    let mut order_rng = substream(config.seed, "router-batches");
    let order = shuffled(aux.rows(), &mut order_rng);
    let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
    let mut rng = substream(config.seed, "router-training");
    let n = aux.rows().max(1) as f64;
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut unsup_sum = 0.0;
        for (batch, &b) in shuffled(batches.len(), &mut rng).iter().enumerate() {
            let idx = batches[b];
            let mut tape = Tape::new();
            let lv = tape.param(logits.clone());
            let ones = tape.constant(Tensor::full(&[idx.len(), 1], 1.0));
            let soft = tape.softmax_rows(lv)?;
            let per_block = (0..blocks)
                .map(|l| {
                    let row = tape.slice(soft, l * k, vec![1, k])?;
                    tape.matmul(ones, row)
                })
                .collect::<Result<Vec<_>>>()?;
            let weights: Vec<Var> = (0..layers).map(|l| per_block[l.min(blocks - 1)]).collect();
            let base_layers = spec.load(&mut tape, base, false)?;
            let deltas = load_deltas(spec, &mut tape, vectors)?;
            let x = tape.constant(aux.select_rows(idx));
            let out = spec.routed_forward(&mut tape, &base_layers, &deltas, &weights, x)?;
            let unsup = loss_unsup_on_tape(&mut tape, out.logits)?;
            let value = tape.scalar_value(unsup);
            if !value.is_finite() {
                return Err(Error::NonFinite { stage: "train_static", epoch, batch, value });
            }
            unsup_sum += value;
            let grads = tape.backward(unsup)?;
            let mut params = [logits];
            sgd_step(&mut params, &[lv], &grads, config.learning_rate);
            let [next] = params;
            logits = next;
            logits.clear_grad();
        }
        trace.push(LossRecord { epoch, l_unsup: unsup_sum / n, l_dis: 0.0, l_bd: unsup_sum / n });
    }
    let soft: Vec<Vec<f64>> = (0..blocks).map(|l| softmax_slice(logits.row(l))).collect();
    let weights = match config.mode {
        MergeMode::TaskWise => MergeWeights::task_wise(soft[0].clone()),
        MergeMode::LayerWise => {
            let w = (0..k).flat_map(|t| soft.iter().map(move |b| b[t])).collect();
            MergeWeights::layer_wise(k, layers, w)?
        }
    };
    Ok((weights, trace))
}

/// Logits of the single merged model `θ0 + Σ w_k τ_k` on `inputs`.
pub fn static_logits(
    spec: &MlpSpec,
    base: &ParameterArchive,
    vectors: &[TaskVector],
    weights: &MergeWeights,
    inputs: &Tensor,
) -> Result<Tensor> {
    let merged = merge_parameters(base, vectors, weights)?;
    Ok(spec.predict(&merged, inputs)?.1)
}
