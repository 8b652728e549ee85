//! On-disk layout shared by the staged commands.
//!
//! ```text
//! <dir>/data/tasks.json        task specs and applied corruption kinds
//! <dir>/data/task{k}.evmg      finetune/aux/test splits
//! <dir>/models/base.evmg
//! <dir>/models/task{k}.evmg    fine-tuned models
//! <dir>/models/head.evmg
//! <dir>/models/router.evmg
//! <dir>/models/static-weights.evmg
//! ```
//!
//! Labels and masks are stored as `f64` columns so everything fits the
//! parameter archive format.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::{compute_task_vector, load_archive, save_archive, ArchiveEntry, MergeWeights, ParameterArchive};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::corruption::{CorruptionKind, Corrupted};
use super::pipeline::Prepared;
use super::scenario::Scenario;
use super::tasks::{Dataset, TaskData, TaskSpec};

/// Everything the generate stage produces for one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct DataBundle {
    pub tasks: Vec<TaskData>,
    pub test_corrupted: Vec<Corrupted>,
    pub aux: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct TaskIndex {
    seed: u64,
    tasks: Vec<TaskRecord>,
}

#[derive(Serialize, Deserialize)]
struct TaskRecord {
    spec: TaskSpec,
    applied: Vec<Vec<CorruptionKind>>,
}

pub fn data_dir(dir: &Path) -> PathBuf {
    dir.join("data")
}

pub fn models_dir(dir: &Path) -> PathBuf {
    dir.join("models")
}

fn labels_tensor(labels: &[usize]) -> Tensor {
    Tensor::vector(labels.iter().map(|&y| y as f64).collect())
}

fn put(entries: &mut Vec<ArchiveEntry>, name: &str, t: &Tensor) {
    entries.push(ArchiveEntry::new(name, 0, t.clone()));
}

fn take<'a>(a: &'a ParameterArchive, name: &str) -> Result<&'a Tensor> {
    a.get(name).ok_or_else(|| Error::Format { entry: Some(name.to_string()), detail: "missing entry".into() })
}

fn labels_of(t: &Tensor) -> Result<Vec<usize>> {
    t.values()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Format { entry: Some("labels".into()), detail: format!("{v} is not a label id") })
            }
        })
        .collect()
}

fn dataset(a: &ParameterArchive, split: &str) -> Result<Dataset> {
    Ok(Dataset {
        inputs: take(a, &format!("{split}.inputs"))?.clone(),
        labels: labels_of(take(a, &format!("{split}.labels"))?)?,
    })
}

pub fn save_data(dir: &Path, seed: u64, data: &DataBundle) -> Result<()> {
    let d = data_dir(dir);
    std::fs::create_dir_all(&d)?;
    let mut records = Vec::new();
    for ((t, c), aux) in data.tasks.iter().zip(&data.test_corrupted).zip(&data.aux) {
        let mut e = Vec::new();
        for (split, ds) in [("finetune", &t.finetune), ("aux", &t.aux), ("test", &t.test)] {
            put(&mut e, &format!("{split}.inputs"), &ds.inputs);
            put(&mut e, &format!("{split}.labels"), &labels_tensor(&ds.labels));
        }
        put(&mut e, "aux.merging", aux);
        put(&mut e, "test.corrupted", &c.inputs);
        put(&mut e, "test.mask", &Tensor::vector(c.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()));
        let archive = ParameterArchive::new(e)?.with_metadata("role", "dataset").with_metadata("task", t.spec.id.to_string());
        save_archive(&archive, d.join(format!("task{}.evmg", t.spec.id)))?;
        records.push(TaskRecord { spec: t.spec.clone(), applied: c.applied.clone() });
    }
    let index = TaskIndex { seed, tasks: records };
    std::fs::write(d.join("tasks.json"), serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

fn read_json(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Loads the generate stage's output and checks it belongs to `seed`.
pub fn load_data(dir: &Path, seed: u64) -> Result<DataBundle> {
    let d = data_dir(dir);
    let index: TaskIndex = serde_json::from_slice(&read_json(&d.join("tasks.json"))?)?;
    if index.seed != seed {
        return Err(Error::Config(format!("{} holds data for seed {}, not {seed}", d.display(), index.seed)));
    }
    let mut out = DataBundle { tasks: Vec::new(), test_corrupted: Vec::new(), aux: Vec::new() };
    for r in index.tasks {
        let a = load_archive(d.join(format!("task{}.evmg", r.spec.id)))?;
        let test = dataset(&a, "test")?;
        let mask: Vec<bool> = take(&a, "test.mask")?.values().iter().map(|&v| v != 0.0).collect();
        if mask.len() != test.len() || r.applied.len() != test.len() {
            return Err(Error::Format { entry: Some("test.mask".into()), detail: "length differs from the test split".into() });
        }
        out.test_corrupted.push(Corrupted { inputs: take(&a, "test.corrupted")?.clone(), mask, applied: r.applied });
        out.aux.push(take(&a, "aux.merging")?.clone());
        out.tasks.push(TaskData { finetune: dataset(&a, "finetune")?, aux: dataset(&a, "aux")?, test, spec: r.spec });
    }
    Ok(out)
}

pub fn save_models(dir: &Path, base: &ParameterArchive, finetuned: &[ParameterArchive]) -> Result<()> {
    let m = models_dir(dir);
    std::fs::create_dir_all(&m)?;
    save_archive(base, m.join("base.evmg"))?;
    for (k, f) in finetuned.iter().enumerate() {
        save_archive(f, m.join(format!("task{k}.evmg")))?;
    }
    Ok(())
}

/// Data plus base and fine-tuned models, ready for merging.
pub fn load_prepared(dir: &Path, scenario: &Scenario, seed: u64) -> Result<Prepared> {
    let data = load_data(dir, seed)?;
    let m = models_dir(dir);
    let base = load_archive(m.join("base.evmg"))?;
    let finetuned = (0..data.tasks.len())
        .map(|k| load_archive(m.join(format!("task{k}.evmg"))))
        .collect::<Result<Vec<_>>>()?;
    let network = scenario.network();
    network.validate(&base)?;
    let vectors = finetuned.iter().map(|f| compute_task_vector(&base, f)).collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        seed,
        network,
        tasks: data.tasks,
        base,
        finetuned,
        vectors,
        test_corrupted: data.test_corrupted,
        aux: data.aux,
    })
}

/// Merge weights as a single `[task_count, layer_count]` entry.
pub fn weights_to_archive(w: &MergeWeights) -> Result<ParameterArchive> {
    let t = Tensor::new(vec![w.task_count(), w.layer_count()], w.values().to_vec())?;
    Ok(ParameterArchive::new(vec![ArchiveEntry::new("weights", 0, t)])?
        .with_metadata("role", "merge-weights")
        .with_metadata("mode", w.mode().as_str()))
}

pub fn weights_from_archive(a: &ParameterArchive) -> Result<MergeWeights> {
    let t = take(a, "weights")?;
    let (k, l) = t.dims2();
    match a.metadata().get("mode").map(String::as_str) {
        Some("task") if l == 1 => Ok(MergeWeights::task_wise(t.values().to_vec())),
        Some("layer") => MergeWeights::layer_wise(k, l, t.values().to_vec()),
        other => Err(Error::Format { entry: Some("weights".into()), detail: format!("unsupported mode {other:?}") }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::pipeline::{generate_data, prepare};

    fn tiny() -> Scenario {
        Scenario::default()
            .with_overrides(&[
                "tasks.num_tasks=2".into(),
                "tasks.feature_dim=6".into(),
                "tasks.finetune_size=12".into(),
                "tasks.aux_size=10".into(),
                "tasks.test_size=10".into(),
                "model.hidden=[4]".into(),
                "unseen.held_out=[1]".into(),
            ])
            .unwrap()
    }

    #[test]
    fn data_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let s = tiny();
        let data = generate_data(&s, 5).unwrap();
        save_data(dir.path(), 5, &data).unwrap();
        assert_eq!(load_data(dir.path(), 5).unwrap(), data);
        assert!(matches!(load_data(dir.path(), 6), Err(Error::Config(_))));
    }

    #[test]
    fn prepared_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let s = tiny();
        let p = prepare(&s, 2).unwrap();
        save_data(dir.path(), 2, &DataBundle { tasks: p.tasks.clone(), test_corrupted: p.test_corrupted.clone(), aux: p.aux.clone() }).unwrap();
        save_models(dir.path(), &p.base, &p.finetuned).unwrap();
        let q = load_prepared(dir.path(), &s, 2).unwrap();
        assert!(q.base.bitwise_eq(&p.base));
        assert_eq!(q.vectors, p.vectors);
        assert_eq!(q.aux, p.aux);
    }

    #[test]
    fn weights_round_trip() {
        let w = MergeWeights::layer_wise(2, 3, vec![0.1, 0.2, 0.3, 0.9, 0.8, 0.7]).unwrap();
        assert_eq!(weights_from_archive(&weights_to_archive(&w).unwrap()).unwrap(), w);
        let t = MergeWeights::task_wise(vec![0.25, 0.75]);
        assert_eq!(weights_from_archive(&weights_to_archive(&t).unwrap()).unwrap(), t);
    }
}
