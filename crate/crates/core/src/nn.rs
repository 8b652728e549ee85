//! Dense `tanh` networks backed by [`ParameterArchive`]s.
//!
//! Linear layer `l` owns `layer{l}.weight` (`in × out`) and `layer{l}.bias`,
//! both with `layer_index = l`. The activation after the last hidden layer is
//! the pooled feature vector consumed by the evidential head and the router.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::archive::{ArchiveEntry, ParameterArchive, TaskVector};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

/// Weight and bias nodes of one linear layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

/// Nodes produced by a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub pooled: Var,
    pub logits: Var,
}

pub fn weight_name(layer: usize) -> String {
    format!("layer{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("layer{layer}.bias")
}

impl MlpSpec {
    pub fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn layer_dims(&self, layer: usize) -> (usize, usize) {
        let input = if layer == 0 {
            self.input_dim
        } else {
            self.hidden[layer - 1]
        };
        let output = self.hidden.get(layer).copied().unwrap_or(self.output_dim);
        (input, output)
    }

    /// Width of the pooled feature vector.
    pub fn pooled_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }

    /// Glorot-normal weights, zero biases.
    pub fn init(&self, rng: &mut Rng) -> ParameterArchive {
        let mut entries = Vec::new();
        for l in 0..self.layer_count() {
            let (i, o) = self.layer_dims(l);
            let std = (2.0 / (i + o) as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            let w: Vec<f64> = (0..i * o).map(|_| normal.sample(rng)).collect();
            entries.push(ArchiveEntry::new(
                weight_name(l),
                l as u32,
                Tensor::new(vec![i, o], w).unwrap(),
            ));
            entries.push(ArchiveEntry::new(bias_name(l), l as u32, Tensor::zeros(&[o])));
        }
        ParameterArchive::new(entries).unwrap()
    }

    pub fn validate(&self, archive: &ParameterArchive) -> Result<()> {
        if archive.entries().len() != 2 * self.layer_count() {
            return Err(Error::Contract(format!(
                "archive has {} entries, network needs {}",
                archive.entries().len(),
                2 * self.layer_count()
            )));
        }
        for l in 0..self.layer_count() {
            let (i, o) = self.layer_dims(l);
            for (name, shape) in [(weight_name(l), vec![i, o]), (bias_name(l), vec![o])] {
                match archive.get(&name) {
                    Some(t) if t.shape() == shape.as_slice() => {}
                    Some(t) => {
                        return Err(Error::Layout {
                            entry: name,
                            detail: format!("expected {shape:?}, found {:?}", t.shape()),
                        })
                    }
                    None => {
                        return Err(Error::Layout {
                            entry: name,
                            detail: "missing".into(),
                        })
                    }
                }
            }
        }
        Ok(())
    }

    /// Places every layer of `archive` on the tape.
    pub fn load(&self, tape: &mut Tape, archive: &ParameterArchive, trainable: bool) -> Result<Vec<LayerVars>> {
        self.validate(archive)?;
        Ok((0..self.layer_count())
            .map(|l| {
                let w = archive.get(&weight_name(l)).unwrap().clone();
                let b = archive.get(&bias_name(l)).unwrap().clone();
                if trainable {
                    LayerVars {
                        weight: tape.param(w),
                        bias: tape.param(b),
                    }
                } else {
                    LayerVars {
                        weight: tape.constant(w),
                        bias: tape.constant(b),
                    }
                }
            })
            .collect())
    }

    pub fn forward(&self, tape: &mut Tape, layers: &[LayerVars], x: Var) -> Result<Forward> {
        let mut h = x;
        let mut pooled = x;
        for (l, lv) in layers.iter().enumerate() {
            let y = tape.linear(h, lv.weight, lv.bias)?;
            if l + 1 < layers.len() {
                h = tape.tanh(y);
                pooled = h;
            } else {
                h = y;
            }
        }
        Ok(Forward { pooled, logits: h })
    }

    /// Forward pass whose parameters for sample `i` at layer `l` are
    /// `θ0 + Σ_k w[l][i, k] · τ_k`, without materialising any merged archive.
    ///
    /// `layer_weights[l]` is an `[m × K]` node; task-wise merging passes the
    /// same node for every layer.
    pub fn routed_forward(
        &self,
        tape: &mut Tape,
        base: &[LayerVars],
        deltas: &[Vec<LayerVars>],
        layer_weights: &[Var],
        x: Var,
    ) -> Result<Forward> {
        if layer_weights.len() != self.layer_count() {
            return Err(Error::Contract(format!(
                "{} layer weight blocks for {} layers",
                layer_weights.len(),
                self.layer_count()
            )));
        }
        let mut h = x;
        let mut pooled = x;
        for l in 0..self.layer_count() {
            let mut y = tape.linear(h, base[l].weight, base[l].bias)?;
            for (k, d) in deltas.iter().enumerate() {
                let yk = tape.linear(h, d[l].weight, d[l].bias)?;
                let wk = tape.slice_cols(layer_weights[l], k, k + 1)?;
                let scaled = tape.scale_rows(yk, wk)?;
                y = tape.add(y, scaled)?;
            }
            if l + 1 < self.layer_count() {
                h = tape.tanh(y);
                pooled = h;
            } else {
                h = y;
            }
        }
        Ok(Forward { pooled, logits: h })
    }

    /// Tape-free forward pass: `(pooled, logits)`.
    pub fn predict(&self, archive: &ParameterArchive, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let layers = self.load(&mut tape, archive, false)?;
        let xv = tape.constant(x.clone());
        let f = self.forward(&mut tape, &layers, xv)?;
        Ok((tape.value(f.pooled).clone(), tape.value(f.logits).clone()))
    }

    pub fn pooled_features(&self, archive: &ParameterArchive, x: &Tensor) -> Result<Tensor> {
        Ok(self.predict(archive, x)?.0)
    }
}

/// Places task vectors on the tape as constants.
pub fn load_deltas(spec: &MlpSpec, tape: &mut Tape, vectors: &[TaskVector]) -> Result<Vec<Vec<LayerVars>>> {
    vectors
        .iter()
        .map(|v| spec.load(tape, v.archive(), false))
        .collect()
}

/// Mean cross-entropy of `logits` against integer labels.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (m, n) = tape.value(logits).dims2();
    if labels.len() != m || labels.iter().any(|&y| y >= n) {
        return Err(Error::Contract("labels do not match logits".into()));
    }
    let mut mask = vec![0.0; m * n];
    for (i, &y) in labels.iter().enumerate() {
        mask[i * n + y] = 1.0;
    }
    let ls = tape.log_softmax_rows(logits)?;
    let mask = tape.constant(Tensor::new(vec![m, n], mask)?);
    let picked = tape.mul(ls, mask)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / m as f64))
}

/// `p -= lr · ∂loss/∂p` for each parameter/node pair.
pub fn sgd_step(params: &mut [Tensor], vars: &[Var], grads: &Gradients, lr: f64) {
    for (p, &v) in params.iter_mut().zip(vars) {
        if let Some(g) = grads.get(v) {
            p.values_mut().iter_mut().zip(g).for_each(|(x, g)| *x -= lr * g);
        }
    }
}

/// Fisher-Yates permutation of `0..n`.
pub fn shuffled(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Archive entries in `(weight, bias)` layer order, for optimisers.
pub fn archive_to_params(spec: &MlpSpec, archive: &ParameterArchive) -> Result<Vec<Tensor>> {
    spec.validate(archive)?;
    Ok((0..spec.layer_count())
        .flat_map(|l| {
            [
                archive.get(&weight_name(l)).unwrap().clone(),
                archive.get(&bias_name(l)).unwrap().clone(),
            ]
        })
        .collect())
}

pub fn params_to_archive(spec: &MlpSpec, params: Vec<Tensor>) -> Result<ParameterArchive> {
    if params.len() != 2 * spec.layer_count() {
        return Err(Error::Contract("parameter count does not match network".into()));
    }
    let mut entries = Vec::new();
    for (i, mut t) in params.into_iter().enumerate() {
        t.clear_grad();
        let l = i / 2;
        let name = if i % 2 == 0 { weight_name(l) } else { bias_name(l) };
        entries.push(ArchiveEntry::new(name, l as u32, t));
    }
    ParameterArchive::new(entries)
}

pub fn params_to_layers(tape: &mut Tape, params: &[Tensor]) -> (Vec<Var>, Vec<LayerVars>) {
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let layers = vars
        .chunks(2)
        .map(|c| LayerVars {
            weight: c[0],
            bias: c[1],
        })
        .collect();
    (vars, layers)
}
