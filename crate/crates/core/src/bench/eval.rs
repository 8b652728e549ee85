//! Top-1 accuracy of merged models over the unified label space.

use serde::{Deserialize, Serialize};

use crate::archive::{merge_parameters, MergeWeights, ParameterArchive, TaskVector};
use crate::error::{Error, Result};
use crate::nn::MlpSpec;
use crate::router::RouterNet;
use crate::tensor::{argmax, Tensor};

use super::tasks::Dataset;

pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Contract("accuracy of an empty dataset".into()));
    }
    if logits.rows() != labels.len() {
        return Err(Error::shape("accuracy", logits.shape(), &[labels.len()]));
    }
    let hits = logits.row_iter().zip(labels).filter(|(row, &y)| argmax(row) == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Anything that maps inputs to unified-label logits.
pub enum Model<'a> {
    Archive(&'a ParameterArchive),
    Static { base: &'a ParameterArchive, vectors: &'a [TaskVector], weights: &'a MergeWeights },
    Routed { base: &'a ParameterArchive, vectors: &'a [TaskVector], router: &'a RouterNet },
}

impl Model<'_> {
    pub fn logits(&self, spec: &MlpSpec, inputs: &Tensor) -> Result<Tensor> {
        match self {
            Model::Archive(a) => Ok(spec.predict(a, inputs)?.1),
            Model::Static { base, vectors, weights } => {
                let merged = merge_parameters(base, vectors, weights)?;
                Ok(spec.predict(&merged, inputs)?.1)
            }
            Model::Routed { base, vectors, router } => router.merged_logits(spec, base, vectors, inputs),
        }
    }
}

/// Accuracy per task plus their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub condition: String,
    pub per_task: Vec<(String, f64)>,
    pub average: f64,
    pub seed: u64,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

pub fn evaluate_merged(
    spec: &MlpSpec,
    model: &Model<'_>,
    datasets: &[(String, &Dataset)],
    method: &str,
    condition: &str,
    seed: u64,
) -> Result<EvalReport> {
    let start = std::time::Instant::now();
    if datasets.is_empty() {
        return Err(Error::Contract("evaluation needs at least one dataset".into()));
    }
    let per_task = datasets
        .iter()
        .map(|(name, d)| Ok((name.clone(), accuracy(&model.logits(spec, &d.inputs)?, &d.labels)?)))
        .collect::<Result<Vec<_>>>()?;
    let average = per_task.iter().map(|(_, a)| a).sum::<f64>() / per_task.len() as f64;
    Ok(EvalReport {
        method: method.to_string(),
        condition: condition.to_string(),
        per_task,
        average,
        seed,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}
