//! Synthetic classification tasks in a shared feature space.
//!
//! Task `k` is a Gaussian mixture around its own centre; its classes own the
//! contiguous unified label range `k·C .. (k+1)·C`. Every split draws from its
//! own random stream, so splits never share samples.

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskGenConfig {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub feature_dim: usize,
    pub finetune_size: usize,
    pub aux_size: usize,
    pub test_size: usize,
    /// Standard deviation of task centres around the origin.
    pub task_spread: f64,
    /// Distance of class means from their task centre.
    pub class_separation: f64,
    /// Within-class standard deviation.
    pub noise: f64,
}

impl Default for TaskGenConfig {
    fn default() -> Self {
        TaskGenConfig {
            num_tasks: 4,
            classes_per_task: 3,
            feature_dim: 32,
            finetune_size: 240,
            aux_size: 120,
            test_size: 200,
            task_spread: 1.0,
            class_separation: 2.0,
            noise: 1.0,
        }
    }
}

impl TaskGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 || self.classes_per_task == 0 || self.feature_dim == 0 {
            return Err(Error::Config("tasks, classes and feature dim must be positive".into()));
        }
        for (name, v) in [("task_spread", self.task_spread), ("class_separation", self.class_separation), ("noise", self.noise)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn unified_label_count(&self) -> usize {
        self.num_tasks * self.classes_per_task
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Finetune,
    Aux,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Finetune => "finetune",
            Split::Aux => "aux",
            Split::Test => "test",
        }
    }
}

/// Inputs with labels in the unified label space.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Stacks datasets of equal width.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let cols = parts.first().map_or(0, |d| d.inputs.cols());
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for d in parts {
            if d.inputs.cols() != cols {
                return Err(Error::shape("concat", &[cols], &[d.inputs.cols()]));
            }
            values.extend_from_slice(d.inputs.values());
            labels.extend_from_slice(&d.labels);
        }
        Ok(Dataset { inputs: Tensor::new(vec![labels.len(), cols], values)?, labels })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: usize,
    /// Unified label ids owned by this task.
    pub labels: Vec<usize>,
    pub class_means: Vec<Vec<f64>>,
    pub noise: f64,
    pub seed: u64,
}

impl TaskSpec {
    /// Draws `n` samples with balanced, shuffled-by-stream class labels.
    pub fn sample(&self, split: Split, n: usize) -> Dataset {
        let mut rng = substream(self.seed, &format!("task{}/{}", self.id, split.as_str()));
        let d = self.class_means.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % self.labels.len();
            labels.push(self.labels[c]);
            for &m in &self.class_means[c] {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(m + self.noise * z);
            }
        }
        Dataset { inputs: Tensor::new(vec![n, d], values).expect("sized above"), labels }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub spec: TaskSpec,
    pub finetune: Dataset,
    pub aux: Dataset,
    pub test: Dataset,
}

fn unit_direction(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn generate_tasks(config: &TaskGenConfig, seed: u64) -> Result<Vec<TaskData>> {
    config.validate()?;
    let mut rng = substream(seed, "data");
    let centre = Normal::new(0.0, config.task_spread).map_err(|e| Error::Config(e.to_string()))?;
    let c = config.classes_per_task;
    (0..config.num_tasks)
        .map(|k| {
            let task_centre: Vec<f64> = (0..config.feature_dim).map(|_| centre.sample(&mut rng)).collect();
            let class_means = (0..c)
                .map(|_| {
                    let dir = unit_direction(config.feature_dim, &mut rng);
                    task_centre.iter().zip(dir).map(|(t, u)| t + config.class_separation * u).collect()
                })
                .collect();
            let spec = TaskSpec {
                id: k,
                labels: (k * c..(k + 1) * c).collect(),
                class_means,
                noise: config.noise,
                seed,
            };
            Ok(TaskData {
                finetune: spec.sample(Split::Finetune, config.finetune_size),
                aux: spec.sample(Split::Aux, config.aux_size),
                test: spec.sample(Split::Test, config.test_size),
                spec,
            })
        })
        .collect()
}
