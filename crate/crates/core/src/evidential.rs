//! Dirichlet evidential head over the unified label space.
//!
//! Non-negative evidence `e` (softplus of the head logits) parameterises
//! `Dir(α)` with `α = e + 1`. From `S = Σα` follow beliefs `e/S`, the
//! uncertainty mass `L/S` and expected probabilities `α/S`. The head is
//! trained without labels on an entropy term, a KL pull toward `Dir(1)`, and
//! an inverse-correlation term tying the uncertainty to the inter-class
//! evidential contrast (IEC).

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::archive::{ArchiveEntry, ParameterArchive};
use crate::error::{Error, Result};
use crate::nn::{sgd_step, shuffled, MlpSpec};
use crate::rng::Rng;
use crate::tensor::special::{digamma, ln_gamma};
use crate::tensor::{Tape, Tensor, Var};

/// Floor applied to every logarithm argument.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DirichletOpinion {
    pub evidence: Vec<f64>,
    pub alpha: Vec<f64>,
    pub strength: f64,
    pub belief: Vec<f64>,
    pub uncertainty: f64,
    pub probability: Vec<f64>,
}

impl DirichletOpinion {
    pub fn label_count(&self) -> usize {
        self.alpha.len()
    }

    /// Largest and second-largest concentration.
    pub fn top_two(&self) -> (f64, f64) {
        let mut first = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for &a in &self.alpha {
            if a > first {
                second = first;
                first = a;
            } else if a > second {
                second = a;
            }
        }
        (first, second)
    }
}

pub fn evidence_to_opinion(evidence: &[f64], label_count: usize) -> Result<DirichletOpinion> {
    if evidence.len() != label_count {
        return Err(Error::shape("evidence_to_opinion", &[evidence.len()], &[label_count]));
    }
    if let Some(bad) = evidence.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
        return Err(Error::Contract(format!("evidence must be finite and non-negative, got {bad}")));
    }
    let alpha: Vec<f64> = evidence.iter().map(|e| e + 1.0).collect();
    let strength = evidence.iter().sum::<f64>() + label_count as f64;
    Ok(DirichletOpinion {
        belief: evidence.iter().map(|e| e / strength).collect(),
        uncertainty: label_count as f64 / strength,
        probability: alpha.iter().map(|a| a / strength).collect(),
        evidence: evidence.to_vec(),
        alpha,
        strength,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropySign {
    /// `+Σ p log p`: minimising it raises predictive entropy.
    AsWritten,
    /// `-Σ p log p`: ordinary entropy minimisation.
    MinimizeEntropy,
}

impl EntropySign {
    pub fn factor(self) -> f64 {
        match self {
            EntropySign::AsWritten => 1.0,
            EntropySign::MinimizeEntropy => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub unified_label_count: usize,
    #[serde(default = "default_coef")]
    pub lambda: f64,
    #[serde(default = "default_coef")]
    pub gamma: f64,
    #[serde(default = "default_true")]
    pub iec_clip: bool,
    #[serde(default = "default_sign")]
    pub entropy_sign: EntropySign,
    /// Let gradients flow through ν into the inverse-correlation term.
    #[serde(default)]
    pub iec_gradient: bool,
}

fn default_coef() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

fn default_sign() -> EntropySign {
    EntropySign::AsWritten
}

impl HeadConfig {
    pub fn new(unified_label_count: usize) -> Self {
        HeadConfig {
            unified_label_count,
            lambda: default_coef(),
            gamma: default_coef(),
            iec_clip: true,
            entropy_sign: EntropySign::AsWritten,
            iec_gradient: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.unified_label_count < 2 {
            return Err(Error::Config("unified label count must be at least 2".into()));
        }
        if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::Config("lambda and gamma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Inter-class evidential contrast `ν = (S/α₁)(L/S)(α₂/α₁)` over the two
/// largest concentrations, optionally clipped to `[0, 1]`.
pub fn iec_score(opinion: &DirichletOpinion, clip: bool) -> f64 {
    let l = opinion.label_count() as f64;
    let (a1, a2) = opinion.top_two();
    let s = opinion.strength;
    let nu = (s / a1) * (l / s) * (a2 / a1);
    if clip {
        nu.clamp(0.0, 1.0)
    } else {
        nu
    }
}

/// `-Σ [ν log(1-u) + (1-ν) log u]` over `(ν, u)` pairs.
pub fn loss_inverse(pairs: &[(f64, f64)]) -> f64 {
    -pairs
        .iter()
        .map(|&(nu, u)| nu * (1.0 - u).max(LOG_FLOOR).ln() + (1.0 - nu) * u.max(LOG_FLOOR).ln())
        .sum::<f64>()
}

/// `KL(Dir(α) ‖ Dir(1))`.
pub fn kl_dirichlet_uniform(alpha: &[f64]) -> f64 {
    let l = alpha.len() as f64;
    let s: f64 = alpha.iter().sum();
    let psi_s = digamma(s);
    ln_gamma(s) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(l)
        + alpha.iter().map(|&a| (a - 1.0) * (digamma(a) - psi_s)).sum::<f64>()
}

/// `Σ_i [sign · Σ_j p_ij log p_ij + λ · KL(Dir(α_i) ‖ Dir(1))]`.
pub fn loss_entropy_kl(opinions: &[DirichletOpinion], lambda: f64, sign: EntropySign) -> f64 {
    opinions
        .iter()
        .map(|o| {
            let plogp: f64 = o.probability.iter().map(|&p| p * p.max(LOG_FLOOR).ln()).sum();
            sign.factor() * plogp + lambda * kl_dirichlet_uniform(&o.alpha)
        })
        .sum()
}

pub fn loss_head(opinions: &[DirichletOpinion], config: &HeadConfig) -> f64 {
    let pairs: Vec<(f64, f64)> = opinions
        .iter()
        .map(|o| (iec_score(o, config.iec_clip), o.uncertainty))
        .collect();
    loss_entropy_kl(opinions, config.lambda, config.entropy_sign) + config.gamma * loss_inverse(&pairs)
}

/// Head objective on the tape from an `[m × L]` evidence node.
pub fn head_loss_on_tape(tape: &mut Tape, evidence: Var, config: &HeadConfig) -> Result<Var> {
    head_loss_impl(tape, evidence, config, None)
}

/// Same objective with ν pinned to `nu` (one value per row).
pub fn head_loss_with_iec(tape: &mut Tape, evidence: Var, nu: &[f64], config: &HeadConfig) -> Result<Var> {
    head_loss_impl(tape, evidence, config, Some(nu))
}

/// Current ν for each row of an evidence matrix.
pub fn iec_from_evidence(evidence: &Tensor, config: &HeadConfig) -> Vec<f64> {
    let l = evidence.cols();
    evidence
        .row_iter()
        .map(|row| {
            let alpha: Vec<f64> = row.iter().map(|e| e + 1.0).collect();
            let s: f64 = alpha.iter().sum();
            let (a1, a2) = top_two(&alpha);
            let nu = (s / a1) * (l as f64 / s) * (a2 / a1);
            if config.iec_clip {
                nu.clamp(0.0, 1.0)
            } else {
                nu
            }
        })
        .collect()
}

fn head_loss_impl(tape: &mut Tape, evidence: Var, config: &HeadConfig, frozen: Option<&[f64]>) -> Result<Var> {
    let (m, l) = tape.value(evidence).dims2();
    if l != config.unified_label_count {
        return Err(Error::shape("head_loss", &[m, l], &[config.unified_label_count]));
    }
    let lf = l as f64;
    let alpha = tape.add_scalar(evidence, 1.0);
    let strength = tape.sum_rows(alpha);
    let total_evidence = tape.sum_rows(evidence);
    let prob = tape.div_rows(alpha, strength)?;

    // sign · Σ p log p
    let logp = tape.ln(prob, LOG_FLOOR);
    let plogp = tape.mul(prob, logp)?;
    let plogp = tape.sum_rows(plogp);
    let ent = tape.scale(plogp, config.entropy_sign.factor());

    // KL(Dir(α) ‖ Dir(1)) = lnΓ(S) - Σ lnΓ(α) - lnΓ(L) + Σ e ψ(α) - ψ(S) Σ e
    let lg_s = tape.lgamma(strength);
    let lg_a = tape.lgamma(alpha);
    let lg_a = tape.sum_rows(lg_a);
    let psi_a = tape.digamma(alpha);
    let e_psi = tape.mul(evidence, psi_a)?;
    let e_psi = tape.sum_rows(e_psi);
    let psi_s = tape.digamma(strength);
    let psi_term = tape.mul(psi_s, total_evidence)?;
    let kl = tape.sub(lg_s, lg_a)?;
    let kl = tape.add_scalar(kl, -ln_gamma(lf));
    let kl = tape.add(kl, e_psi)?;
    let kl = tape.sub(kl, psi_term)?;
    let kl = tape.scale(kl, config.lambda);
    let ent_kl = tape.add(ent, kl)?;
    let ent_kl = tape.sum(ent_kl);

    // -Σ [ν log(1-u) + (1-ν) log u],  u = L/S,  1-u = Σe/S
    let l_vec = tape.constant(Tensor::full(&[m], lf));
    let u = tape.div(l_vec, strength)?;
    let one_minus_u = tape.div(total_evidence, strength)?;
    let nu = match frozen {
        Some(nu) if nu.len() == m => tape.constant(Tensor::vector(nu.to_vec())),
        Some(nu) => return Err(Error::shape("head_loss iec", &[m], &[nu.len()])),
        None => iec_on_tape(tape, alpha, config)?,
    };
    let log_1mu = tape.ln(one_minus_u, LOG_FLOOR);
    let log_u = tape.ln(u, LOG_FLOOR);
    let a = tape.mul(nu, log_1mu)?;
    let neg_nu = tape.scale(nu, -1.0);
    let one_minus_nu = tape.add_scalar(neg_nu, 1.0);
    let b = tape.mul(one_minus_nu, log_u)?;
    let inv = tape.add(a, b)?;
    let inv = tape.sum(inv);
    let inv = tape.scale(inv, -config.gamma);

    tape.add(ent_kl, inv)
}

fn iec_on_tape(tape: &mut Tape, alpha: Var, config: &HeadConfig) -> Result<Var> {
    let (m, l) = tape.value(alpha).dims2();
    let av = tape.value(alpha).values().to_vec();
    if !config.iec_gradient {
        let evidence = tape.value(alpha).map(|a| a - 1.0);
        return Ok(tape.constant(Tensor::vector(iec_from_evidence(&evidence, config))));
    }
    // Differentiable variant: ν = L α₂ / α₁² with the top-two selection frozen.
    let mut m1 = vec![0.0; m * l];
    let mut m2 = vec![0.0; m * l];
    for i in 0..m {
        let row = &av[i * l..(i + 1) * l];
        let (i1, i2) = top_two_index(row);
        m1[i * l + i1] = 1.0;
        m2[i * l + i2] = 1.0;
    }
    let m1 = tape.constant(Tensor::new(vec![m, l], m1)?);
    let m2 = tape.constant(Tensor::new(vec![m, l], m2)?);
    let a1 = tape.mul(alpha, m1)?;
    let a1 = tape.sum_rows(a1);
    let a2 = tape.mul(alpha, m2)?;
    let a2 = tape.sum_rows(a2);
    let a1sq = tape.mul(a1, a1)?;
    let ratio = tape.div(a2, a1sq)?;
    let nu = tape.scale(ratio, l as f64);
    Ok(if config.iec_clip {
        tape.clamp(nu, 0.0, 1.0)
    } else {
        nu
    })
}

fn top_two_index(row: &[f64]) -> (usize, usize) {
    let mut first = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[first] {
            first = i;
        }
    }
    let mut second = if first == 0 { 1 } else { 0 };
    for (i, &v) in row.iter().enumerate() {
        if i != first && v > row[second] {
            second = i;
        }
    }
    (first, second)
}

fn top_two(row: &[f64]) -> (f64, f64) {
    let (i, j) = top_two_index(row);
    (row[i], row[j])
}

/// Linear map from pooled backbone features to evidence logits.
#[derive(Clone, Debug, PartialEq)]
pub struct EvidentialHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

impl EvidentialHead {
    pub fn init(feature_dim: usize, label_count: usize, rng: &mut Rng) -> Self {
        let std = (1.0 / feature_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let w = (0..feature_dim * label_count).map(|_| normal.sample(rng)).collect();
        EvidentialHead {
            weight: Tensor::new(vec![feature_dim, label_count], w).unwrap(),
            bias: Tensor::zeros(&[label_count]),
        }
    }

    pub fn label_count(&self) -> usize {
        self.bias.len()
    }

    pub fn evidence_on_tape(&self, tape: &mut Tape, features: Var, w: Var, b: Var) -> Result<Var> {
        let _ = self;
        let z = tape.linear(features, w, b)?;
        Ok(tape.softplus(z))
    }

    /// Evidence for each row of `features`.
    pub fn evidence(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = tape.constant(features.clone());
        let w = tape.constant(self.weight.clone());
        let b = tape.constant(self.bias.clone());
        let e = self.evidence_on_tape(&mut tape, f, w, b)?;
        Ok(tape.value(e).clone())
    }

    pub fn opinions(&self, features: &Tensor) -> Result<Vec<DirichletOpinion>> {
        let ev = self.evidence(features)?;
        ev.row_iter()
            .map(|row| evidence_to_opinion(row, self.label_count()))
            .collect()
    }

    /// `layer_index` is the backbone's layer count so the head sorts last.
    pub fn to_archive(&self, layer_index: u32) -> ParameterArchive {
        ParameterArchive::new(vec![
            ArchiveEntry::new(HEAD_WEIGHT, layer_index, self.weight.clone()),
            ArchiveEntry::new(HEAD_BIAS, layer_index, self.bias.clone()),
        ])
        .unwrap()
        .with_metadata("role", "evidential_head")
    }

    pub fn from_archive(archive: &ParameterArchive) -> Result<Self> {
        if archive.metadata().get("role").map(String::as_str) != Some("evidential_head") {
            return Err(Error::Format {
                entry: None,
                detail: "archive role is not evidential_head".into(),
            });
        }
        let get = |n: &str| {
            archive.get(n).cloned().ok_or_else(|| Error::Format {
                entry: Some(n.to_owned()),
                detail: "missing".into(),
            })
        };
        let head = EvidentialHead {
            weight: get(HEAD_WEIGHT)?,
            bias: get(HEAD_BIAS)?,
        };
        if head.weight.shape().len() != 2 || head.weight.shape()[1] != head.bias.len() {
            return Err(Error::Format {
                entry: Some(HEAD_WEIGHT.into()),
                detail: "weight and bias disagree on the label count".into(),
            });
        }
        Ok(head)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadTraining {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for HeadTraining {
    fn default() -> Self {
        HeadTraining {
            epochs: 60,
            learning_rate: 0.05,
            batch_size: 32,
        }
    }
}

/// Trains `head` on frozen pooled features of `inputs` under `base`.
///
/// Each step descends the batch mean of the head objective. Returns the
/// trained head and the per-epoch mean loss per sample.
pub fn train_head(
    backbone: &MlpSpec,
    base: &ParameterArchive,
    head: EvidentialHead,
    inputs: &Tensor,
    config: &HeadConfig,
    training: &HeadTraining,
    rng: &mut Rng,
) -> Result<(EvidentialHead, Vec<f64>)> {
    let features = backbone.pooled_features(base, inputs)?;
    train_head_on_features(head, &features, config, training, rng)
}

pub fn train_head_on_features(
    mut head: EvidentialHead,
    features: &Tensor,
    config: &HeadConfig,
    training: &HeadTraining,
    rng: &mut Rng,
) -> Result<(EvidentialHead, Vec<f64>)> {
    config.validate()?;
    if head.label_count() != config.unified_label_count {
        return Err(Error::Contract("head width differs from the unified label count".into()));
    }
    let n = features.rows();
    let bs = training.batch_size.max(1);
    let mut trace = Vec::with_capacity(training.epochs);
    for epoch in 0..training.epochs {
        let order = shuffled(n, rng);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(bs).enumerate() {
            let x = features.select_rows(idx);
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let w = tape.param(head.weight.clone());
            let b = tape.param(head.bias.clone());
            let e = head.evidence_on_tape(&mut tape, xv, w, b)?;
            let loss = head_loss_on_tape(&mut tape, e, config)?;
            let value = tape.scalar_value(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    stage: "train_head",
                    epoch,
                    batch,
                    value,
                });
            }
            total += value;
            let mean = tape.scale(loss, 1.0 / idx.len() as f64);
            let grads = tape.backward(mean)?;
            let mut params = [head.weight, head.bias];
            sgd_step(&mut params, &[w, b], &grads, training.learning_rate);
            let [nw, nb] = params;
            head.weight = nw;
            head.bias = nb;
        }
        trace.push(total / n.max(1) as f64);
    }
    head.weight.clear_grad();
    head.bias.clear_grad();
    Ok((head, trace))
}
