//! Supervised pretraining and per-task fine-tuning.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::archive::{snap_to_base, ParameterArchive};
use crate::error::{Error, Result};
use crate::nn::{archive_to_params, cross_entropy, params_to_archive, params_to_layers, sgd_step, shuffled, MlpSpec};
use crate::rng::Rng;
use crate::tensor::Tape;

use super::tasks::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 20, learning_rate: 0.05, batch_size: 32 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() || self.batch_size == 0 {
            return Err(Error::Config("learning rate and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Mini-batch cross-entropy descent from `init`. Zero epochs return `init`
/// untouched. With `labels`, the softmax runs over that contiguous label
/// range only, so logits outside it receive no gradient.
pub fn train_classifier(
    spec: &MlpSpec,
    init: &ParameterArchive,
    data: &Dataset,
    config: &TrainConfig,
    labels: Option<Range<usize>>,
    rng: &mut Rng,
) -> Result<ParameterArchive> {
    config.validate()?;
    spec.validate(init)?;
    if config.epochs == 0 {
        return Ok(init.clone());
    }
    if data.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    let range = labels.unwrap_or(0..spec.output_dim);
    if range.is_empty() || range.end > spec.output_dim || data.labels.iter().any(|y| !range.contains(y)) {
        return Err(Error::Contract(format!("labels must lie in {range:?}")));
    }
    let mut params = archive_to_params(spec, init)?;
    for epoch in 0..config.epochs {
        let order = shuffled(data.len(), rng);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let b = data.select(idx);
            let mut tape = Tape::new();
            let (vars, layers) = params_to_layers(&mut tape, &params);
            let x = tape.constant(b.inputs);
            let out = spec.forward(&mut tape, &layers, x)?;
            let logits = tape.slice_cols(out.logits, range.start, range.end)?;
            let local: Vec<usize> = b.labels.iter().map(|y| y - range.start).collect();
            let loss = cross_entropy(&mut tape, logits, &local)?;
            let value = tape.scalar_value(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite { stage: "finetune", epoch, batch, value });
            }
            let grads = tape.backward(loss)?;
            sgd_step(&mut params, &vars, &grads, config.learning_rate);
        }
    }
    let mut out = params_to_archive(spec, params)?;
    *out.metadata_mut() = init.metadata().clone();
    Ok(out)
}

/// Fine-tunes a copy of `base` on one task's labelled split.
pub fn finetune_task_model(
    spec: &MlpSpec,
    base: &ParameterArchive,
    finetune: &Dataset,
    config: &TrainConfig,
    labels: Option<Range<usize>>,
    rng: &mut Rng,
) -> Result<ParameterArchive> {
    let trained = train_classifier(spec, base, finetune, config, labels, rng)?;
    let mut out = snap_to_base(base, &trained)?;
    if config.epochs > 0 {
        out.metadata_mut().insert("role".into(), "finetuned".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::eval::accuracy;
    use crate::rng::substream;
    use crate::tensor::Tensor;
    use rand::Rng as _;

    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = substream(seed, "sep");
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let shift = if y == 0 { -1.5 } else { 1.5 };
            rows.push(vec![shift + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            labels.push(y);
        }
        Dataset { inputs: Tensor::from_rows(&rows).unwrap(), labels }
    }

    fn spec() -> MlpSpec {
        MlpSpec { input_dim: 2, hidden: vec![8], output_dim: 2 }
    }

    #[test]
    fn zero_epochs_return_base_bitwise() {
        let base = spec().init(&mut substream(0, "init"));
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let out = finetune_task_model(&spec(), &base, &separable(10, 0), &cfg, None, &mut substream(0, "ft")).unwrap();
        assert!(out.bitwise_eq(&base));
    }

    #[test]
    fn separable_task_is_learned() {
        let data = separable(200, 1);
        let base = spec().init(&mut substream(1, "init"));
        let cfg = TrainConfig { epochs: 200, learning_rate: 0.1, batch_size: 32 };
        let ft = finetune_task_model(&spec(), &base, &data, &cfg, None, &mut substream(1, "ft")).unwrap();
        let logits = spec().predict(&ft, &data.inputs).unwrap().1;
        assert!(accuracy(&logits, &data.labels).unwrap() > 0.95);
    }

    #[test]
    fn identical_seeds_give_identical_archives() {
        let data = separable(40, 2);
        let base = spec().init(&mut substream(2, "init"));
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let a = finetune_task_model(&spec(), &base, &data, &cfg, None, &mut substream(3, "ft")).unwrap();
        let b = finetune_task_model(&spec(), &base, &data, &cfg, None, &mut substream(3, "ft")).unwrap();
        assert!(a.bitwise_eq(&b));
    }
}
