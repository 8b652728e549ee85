//! Parameter archives, task vectors and weighted merging.
//!
//! On-disk layout (`EVMG`, all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "EVMG"
//! version      u32
//! entry_count  u32
//! per entry:   name_len u32, name (UTF-8), layer_index u32, rank u32, dims u64 × rank
//! meta_count   u32
//! per pair:    key_len u32, key (UTF-8), value_len u32, value (UTF-8)
//! payload      f64 × product(dims), entries in table order
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"EVMG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub layer_index: u32,
    pub tensor: Tensor,
}

impl ArchiveEntry {
    pub fn new(name: impl Into<String>, layer_index: u32, tensor: Tensor) -> Self {
        ArchiveEntry {
            name: name.into(),
            layer_index,
            tensor,
        }
    }
}

/// Named flat tensors for one model, sorted by `(layer_index, name)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterArchive {
    format_version: u32,
    entries: Vec<ArchiveEntry>,
    metadata: BTreeMap<String, String>,
}

impl ParameterArchive {
    pub fn new(mut entries: Vec<ArchiveEntry>) -> Result<Self> {
        entries.sort_by(|a, b| (a.layer_index, &a.name).cmp(&(b.layer_index, &b.name)));
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Format {
                    entry: Some(e.name.clone()),
                    detail: "duplicate entry name".into(),
                });
            }
        }
        Ok(ParameterArchive {
            format_version: FORMAT_VERSION,
            entries,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    /// Number of distinct layer indices (`max + 1`).
    pub fn layer_count(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.layer_index as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Bit-level equality of layout and values; metadata is ignored.
    pub fn bitwise_eq(&self, other: &ParameterArchive) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.layer_index == b.layer_index
                    && a.tensor.shape() == b.tensor.shape()
                    && a
                        .tensor
                        .values()
                        .iter()
                        .zip(b.tensor.values())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// First layout difference against `other`, if any.
    pub fn layout_mismatch(&self, other: &ParameterArchive) -> Option<Error> {
        for (i, a) in self.entries.iter().enumerate() {
            let Some(b) = other.entries.get(i) else {
                return Some(Error::Layout {
                    entry: a.name.clone(),
                    detail: "missing from the other archive".into(),
                });
            };
            if a.name != b.name || a.layer_index != b.layer_index || a.tensor.shape() != b.tensor.shape() {
                return Some(Error::Layout {
                    entry: a.name.clone(),
                    detail: format!(
                        "({}, layer {}, {:?}) vs ({}, layer {}, {:?})",
                        a.name,
                        a.layer_index,
                        a.tensor.shape(),
                        b.name,
                        b.layer_index,
                        b.tensor.shape()
                    ),
                });
            }
        }
        other.entries.get(self.entries.len()).map(|b| Error::Layout {
            entry: b.name.clone(),
            detail: "extra entry in the other archive".into(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.parameter_count() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            put_str(&mut out, &e.name);
            out.extend_from_slice(&e.layer_index.to_le_bytes());
            out.extend_from_slice(&(e.tensor.shape().len() as u32).to_le_bytes());
            for &d in e.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        for e in &self.entries {
            for v in e.tensor.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, None)?;
        if magic != MAGIC {
            return Err(Error::Format {
                entry: None,
                detail: format!("bad magic bytes {magic:?}, expected \"EVMG\""),
            });
        }
        let version = r.u32(None)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format {
                entry: None,
                detail: format!("unsupported version {version}"),
            });
        }
        let count = r.u32(None)? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string(None)?;
            let layer_index = r.u32(Some(&name))?;
            let rank = r.u32(Some(&name))? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                let d = r.u64(Some(&name))?;
                shape.push(usize::try_from(d).map_err(|_| Error::Format {
                    entry: Some(name.clone()),
                    detail: format!("dimension {d} does not fit in memory"),
                })?);
            }
            table.push((name, layer_index, shape));
        }
        let meta_count = r.u32(None)? as usize;
        let mut metadata = BTreeMap::new();
        for _ in 0..meta_count {
            let k = r.string(None)?;
            let v = r.string(Some(&k))?;
            metadata.insert(k, v);
        }
        let mut entries = Vec::with_capacity(table.len());
        for (name, layer_index, shape) in table {
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::Format {
                    entry: Some(name.clone()),
                    detail: format!("shape {shape:?} overflows"),
                })?;
            let raw = r.take(n, Some(&name))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(shape, values).map_err(|e| Error::Format {
                entry: Some(name.clone()),
                detail: e.to_string(),
            })?;
            entries.push(ArchiveEntry::new(name, layer_index, tensor));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                entry: None,
                detail: format!("{} trailing bytes after payload", bytes.len() - r.pos),
            });
        }
        let sorted = entries
            .windows(2)
            .all(|w| (w[0].layer_index, &w[0].name) < (w[1].layer_index, &w[1].name));
        if !sorted {
            return Err(Error::Format {
                entry: None,
                detail: "entries not sorted by (layer_index, name) or names repeated".into(),
            });
        }
        Ok(ParameterArchive {
            format_version: version,
            entries,
            metadata,
        })
    }

    pub fn inspect(&self) -> ArchiveSummary {
        ArchiveSummary {
            format_version: self.format_version,
            metadata: self.metadata.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| EntrySummary {
                    name: e.name.clone(),
                    layer_index: e.layer_index,
                    shape: e.tensor.shape().to_vec(),
                    len: e.tensor.len(),
                })
                .collect(),
        }
    }
}

/// Entry table view used by `archive-inspect`.
#[derive(Debug, Serialize)]
pub struct ArchiveSummary {
    pub format_version: u32,
    pub metadata: BTreeMap<String, String>,
    pub entries: Vec<EntrySummary>,
}

#[derive(Debug, Serialize)]
pub struct EntrySummary {
    pub name: String,
    pub layer_index: u32,
    pub shape: Vec<usize>,
    pub len: usize,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, entry: Option<&str>) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated {
                entry: entry.map(str::to_owned),
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, entry: Option<&str>) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, entry)?.try_into().unwrap()))
    }

    fn u64(&mut self, entry: Option<&str>) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, entry)?.try_into().unwrap()))
    }

    fn string(&mut self, entry: Option<&str>) -> Result<String> {
        let n = self.u32(entry)? as usize;
        let raw = self.take(n, entry)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            entry: entry.map(str::to_owned),
            detail: "name is not valid UTF-8".into(),
        })
    }
}

pub fn save_archive(archive: &ParameterArchive, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, archive.to_bytes())?;
    Ok(())
}

pub fn load_archive(path: impl AsRef<Path>) -> Result<ParameterArchive> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    ParameterArchive::from_bytes(&bytes)
}

/// Elementwise delta of a fine-tuned archive against its base.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskVector(ParameterArchive);

impl TaskVector {
    pub fn archive(&self) -> &ParameterArchive {
        &self.0
    }

    pub fn into_archive(self) -> ParameterArchive {
        self.0
    }

    /// Wraps deltas that were stored on disk.
    pub fn from_archive(archive: ParameterArchive) -> Self {
        TaskVector(archive)
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        self.0.entries()
    }
}

pub fn compute_task_vector(
    base: &ParameterArchive,
    finetuned: &ParameterArchive,
) -> Result<TaskVector> {
    if let Some(err) = base.layout_mismatch(finetuned) {
        return Err(err);
    }
    let entries = base
        .entries
        .iter()
        .zip(&finetuned.entries)
        .map(|(b, f)| {
            let values = f
                .tensor
                .values()
                .iter()
                .zip(b.tensor.values())
                .map(|(x, y)| x - y)
                .collect();
            let tensor = Tensor::new(b.tensor.shape().to_vec(), values)?;
            Ok(ArchiveEntry::new(b.name.clone(), b.layer_index, tensor))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskVector(
        ParameterArchive::new(entries)?.with_metadata("role", "task_vector"),
    ))
}

/// Rounds `finetuned` onto values of the form `base ⊕ τ`, so adding its task
/// vector back to `base` reproduces it bitwise. Floating-point subtraction
/// does not always invert addition (a weight that shrank far below its base
/// value cannot be rebuilt exactly). Each value moves by at most
/// `2ε·max(|base|, |finetuned|)` and one pass reaches the fixed point.
pub fn snap_to_base(base: &ParameterArchive, finetuned: &ParameterArchive) -> Result<ParameterArchive> {
    let tau = compute_task_vector(base, finetuned)?;
    let mut snapped = merge_parameters(base, std::slice::from_ref(&tau), &MergeWeights::one_hot(1, 0))?;
    *snapped.metadata_mut() = finetuned.metadata().clone();
    Ok(snapped)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMode {
    TaskWise,
    LayerWise,
}

impl MergeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MergeMode::TaskWise => "task",
            MergeMode::LayerWise => "layer",
        }
    }
}

/// Coefficients for `θ* = θ0 + Σ_k w_k τ_k`. Layer-wise weights are stored
/// task-major: `weights[k * layer_count + l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeWeights {
    mode: MergeMode,
    task_count: usize,
    layer_count: usize,
    weights: Vec<f64>,
}

impl MergeWeights {
    pub fn task_wise(weights: Vec<f64>) -> Self {
        MergeWeights {
            mode: MergeMode::TaskWise,
            task_count: weights.len(),
            layer_count: 1,
            weights,
        }
    }

    pub fn layer_wise(task_count: usize, layer_count: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != task_count * layer_count {
            return Err(Error::shape(
                "layer_wise weights",
                &[task_count, layer_count],
                &[weights.len()],
            ));
        }
        Ok(MergeWeights {
            mode: MergeMode::LayerWise,
            task_count,
            layer_count,
            weights,
        })
    }

    pub fn uniform(task_count: usize) -> Self {
        Self::task_wise(vec![1.0 / task_count as f64; task_count])
    }

    pub fn one_hot(task_count: usize, k: usize) -> Self {
        let mut w = vec![0.0; task_count];
        w[k] = 1.0;
        Self::task_wise(w)
    }

    pub fn mode(&self) -> MergeMode {
        self.mode
    }

    pub fn task_count(&self) -> usize {
        self.task_count
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn values(&self) -> &[f64] {
        &self.weights
    }

    /// Coefficient of task `k` at `layer`.
    pub fn weight(&self, k: usize, layer: usize) -> f64 {
        match self.mode {
            MergeMode::TaskWise => self.weights[k],
            MergeMode::LayerWise => self.weights[k * self.layer_count + layer],
        }
    }
}

pub fn merge_parameters(
    base: &ParameterArchive,
    vectors: &[TaskVector],
    weights: &MergeWeights,
) -> Result<ParameterArchive> {
    if vectors.len() != weights.task_count() {
        return Err(Error::Contract(format!(
            "{} task vectors but {} merge weights",
            vectors.len(),
            weights.task_count()
        )));
    }
    for v in vectors {
        if let Some(err) = base.layout_mismatch(v.archive()) {
            return Err(err);
        }
    }
    if weights.mode() == MergeMode::LayerWise && base.layer_count() > weights.layer_count() {
        return Err(Error::Contract(format!(
            "layer index {} out of range for {} layer weights",
            base.layer_count() - 1,
            weights.layer_count()
        )));
    }
    let entries = base
        .entries
        .iter()
        .enumerate()
        .map(|(ei, e)| {
            let layer = e.layer_index as usize;
            let mut values = e.tensor.values().to_vec();
            let mut delta: Option<Vec<f64>> = None;
            for (k, v) in vectors.iter().enumerate() {
                let w = weights.weight(k, layer);
                if w == 0.0 {
                    continue;
                }
                let tau = v.entries()[ei].tensor.values();
                match &mut delta {
                    None => delta = Some(tau.iter().map(|t| w * t).collect()),
                    Some(d) => d.iter_mut().zip(tau).for_each(|(d, t)| *d += w * t),
                }
            }
            if let Some(d) = delta {
                values.iter_mut().zip(d).for_each(|(x, d)| *x += d);
            }
            let tensor = Tensor::new(e.tensor.shape().to_vec(), values)?;
            Ok(ArchiveEntry::new(e.name.clone(), e.layer_index, tensor))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut merged = ParameterArchive::new(entries)?;
    merged.metadata = base.metadata.clone();
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn archive(vals: &[(&str, u32, Vec<f64>)]) -> ParameterArchive {
        ParameterArchive::new(
            vals.iter()
                .map(|(n, l, v)| ArchiveEntry::new(*n, *l, Tensor::vector(v.clone())))
                .collect(),
        )
        .unwrap()
    }

    fn sample() -> ParameterArchive {
        let w = Tensor::new(vec![2, 3], vec![0.5, -1.25, 3.0, 1e-300, -0.0, f64::MAX]).unwrap();
        ParameterArchive::new(vec![
            ArchiveEntry::new("layer1.bias", 1, Tensor::vector(vec![0.1, 0.2, 0.3])),
            ArchiveEntry::new("layer0.weight", 0, w),
            ArchiveEntry::new("layer0.bias", 0, Tensor::vector(vec![f64::MIN_POSITIVE, 7.0, -2.0])),
        ])
        .unwrap()
        .with_metadata("role", "test")
    }

    #[test]
    fn entries_are_sorted_and_unique() {
        let a = sample();
        let names: Vec<_> = a.entries().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["layer0.bias", "layer0.weight", "layer1.bias"]);
        let dup = ParameterArchive::new(vec![
            ArchiveEntry::new("x", 0, Tensor::scalar(1.0)),
            ArchiveEntry::new("x", 1, Tensor::scalar(1.0)),
        ]);
        assert!(dup.is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.evmg");
        let a = sample();
        save_archive(&a, &path).unwrap();
        let b = load_archive(&path).unwrap();
        assert!(a.bitwise_eq(&b));
        assert_eq!(a.metadata(), b.metadata());
        assert_eq!(fs::read(&path).unwrap(), b.to_bytes());
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(ParameterArchive::from_bytes(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_payload_names_the_entry() {
        let bytes = sample().to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        match ParameterArchive::from_bytes(cut) {
            Err(Error::Truncated { entry, .. }) => assert_eq!(entry.as_deref(), Some("layer1.bias")),
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_reported() {
        assert!(matches!(load_archive("/nonexistent/x.evmg"), Err(Error::FileNotFound(_))));
    }

    #[test]
    fn task_vector_examples() {
        let base = archive(&[("p", 0, vec![1.0, 2.0])]);
        let ft = archive(&[("p", 0, vec![2.0, 4.0])]);
        let tv = compute_task_vector(&base, &ft).unwrap();
        assert_eq!(tv.archive().get("p").unwrap().values(), &[1.0, 2.0]);
        let zero = compute_task_vector(&base, &base).unwrap();
        assert!(zero.archive().get("p").unwrap().values().iter().all(|&v| v == 0.0));
        let back = merge_parameters(&base, &[tv], &MergeWeights::one_hot(1, 0)).unwrap();
        assert!(back.bitwise_eq(&ft));
    }

    #[test]
    fn layout_mismatch_names_first_differing_entry() {
        let base = archive(&[("a", 0, vec![1.0]), ("b", 1, vec![1.0, 2.0])]);
        let ft = archive(&[("a", 0, vec![1.0]), ("b", 1, vec![1.0])]);
        match compute_task_vector(&base, &ft) {
            Err(Error::Layout { entry, .. }) => assert_eq!(entry, "b"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn merge_examples() {
        let base = archive(&[("p", 0, vec![1.0, 2.0])]);
        let t1 = TaskVector(archive(&[("p", 0, vec![1.0, 0.0])]));
        let t2 = TaskVector(archive(&[("p", 0, vec![0.0, 2.0])]));
        let vs = [t1, t2];
        let m = merge_parameters(&base, &vs, &MergeWeights::task_wise(vec![0.5, 0.5])).unwrap();
        assert_eq!(m.get("p").unwrap().values(), &[1.5, 3.0]);
        let z = merge_parameters(&base, &vs, &MergeWeights::task_wise(vec![0.0, 0.0])).unwrap();
        assert!(z.bitwise_eq(&base));
        assert!(merge_parameters(&base, &vs, &MergeWeights::uniform(3)).is_err());
    }

    #[test]
    fn layer_wise_needs_enough_layers() {
        let base = archive(&[("a", 0, vec![1.0]), ("b", 2, vec![1.0])]);
        let tv = compute_task_vector(&base, &base).unwrap();
        let w = MergeWeights::layer_wise(1, 2, vec![1.0, 1.0]).unwrap();
        assert!(matches!(merge_parameters(&base, &[tv], &w), Err(Error::Contract(_))));
    }

    fn three_layer(vals: &[f64]) -> ParameterArchive {
        archive(&[
            ("l0", 0, vals[0..3].to_vec()),
            ("l1", 1, vals[3..5].to_vec()),
            ("l2", 2, vals[5..8].to_vec()),
        ])
    }

    proptest! {
        #[test]
        fn merge_identities(
            base in proptest::collection::vec(-5.0f64..5.0, 8),
            d1 in proptest::collection::vec(-1.0f64..1.0, 8),
            d2 in proptest::collection::vec(-1.0f64..1.0, 8),
            w1 in proptest::collection::vec(-2.0f64..2.0, 2),
            w2 in proptest::collection::vec(-2.0f64..2.0, 2),
        ) {
            let base = three_layer(&base);
            let ft: Vec<_> = [d1, d2].iter().map(|d| {
                let v: Vec<f64> = base.entries().iter().flat_map(|e| e.tensor.values().to_vec()).zip(d).map(|(b, d)| b + d).collect();
                three_layer(&v)
            }).collect();
            let tvs: Vec<_> = ft.iter().map(|f| compute_task_vector(&base, f).unwrap()).collect();

            for k in 0..2 {
                let m = merge_parameters(&base, &tvs, &MergeWeights::one_hot(2, k)).unwrap();
                prop_assert!(m.bitwise_eq(&ft[k]));
            }

            let a = merge_parameters(&base, &tvs, &MergeWeights::task_wise(w1.clone())).unwrap();
            let b = merge_parameters(&base, &tvs, &MergeWeights::task_wise(w2.clone())).unwrap();
            let sum: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| x + y).collect();
            let c = merge_parameters(&base, &tvs, &MergeWeights::task_wise(sum)).unwrap();
            for ((ea, eb), (ec, e0)) in a.entries().iter().zip(b.entries()).zip(c.entries().iter().zip(base.entries())) {
                for i in 0..ea.tensor.len() {
                    let lhs = ea.tensor.values()[i] + eb.tensor.values()[i] - e0.tensor.values()[i];
                    prop_assert!((lhs - ec.tensor.values()[i]).abs() < 1e-12);
                }
            }

            let lw: Vec<f64> = w1.iter().flat_map(|&w| [w; 3]).collect();
            let l = merge_parameters(&base, &tvs, &MergeWeights::layer_wise(2, 3, lw).unwrap()).unwrap();
            prop_assert!(l.bitwise_eq(&a));
        }

        #[test]
        fn snapped_models_are_recovered_bitwise(
            base in proptest::collection::vec(-1e3f64..1e3, 8),
            ft in proptest::collection::vec(-1e-3f64..1e-3, 8),
        ) {
            let base = three_layer(&base);
            let raw = three_layer(&ft);
            let snapped = snap_to_base(&base, &raw).unwrap();
            let tv = compute_task_vector(&base, &snapped).unwrap();
            let back = merge_parameters(&base, &[tv], &MergeWeights::one_hot(1, 0)).unwrap();
            prop_assert!(back.bitwise_eq(&snapped));
            for ((s, r), b) in snapped.entries().iter().zip(raw.entries()).zip(base.entries()) {
                for ((x, y), z) in s.tensor.values().iter().zip(r.tensor.values()).zip(b.tensor.values()) {
                    prop_assert!((x - y).abs() <= 2.0 * f64::EPSILON * y.abs().max(z.abs()));
                }
            }
        }

        #[test]
        fn round_trip_is_bitwise(vals in proptest::collection::vec(proptest::num::f64::ANY, 0..20)) {
            let a = ParameterArchive::new(vec![ArchiveEntry::new("w", 3, Tensor::vector(vals))]).unwrap();
            let b = ParameterArchive::from_bytes(&a.to_bytes()).unwrap();
            prop_assert!(a.bitwise_eq(&b));
        }
    }
}
