//! Vector analogs of common image corruptions.
//!
//! Coordinates are read as a 1-D signal split into blocks of four
//! ("channels"). Magnitudes scale with the clean dataset's spread and are
//! drawn afresh for every application:
//!
//! | kind | effect |
//! |---|---|
//! | gaussian-noise | additive noise, σ ∈ [0.5, 1.5]·std |
//! | salt-pepper | 10–25% of coordinates clamped to the data min or max |
//! | brightness | one offset of ±[1, 2]·std on every coordinate |
//! | color-shift | an independent offset per block |
//! | motion-blur | moving average over a window of 3 or 5 |
//! | fog | blend of 40–70% toward the sample mean plus a haze offset |
//! | contrast | scale about the sample mean by a factor in [0.2, 0.5] |
//! | quantization | rounding to a grid step in [1, 2]·std |
//! | pixelate | block averaging over 2 or 4 coordinates |

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

const BLOCK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    GaussianNoise,
    SaltPepper,
    Brightness,
    ColorShift,
    MotionBlur,
    Fog,
    Contrast,
    Quantization,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 9] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::SaltPepper,
        CorruptionKind::Brightness,
        CorruptionKind::ColorShift,
        CorruptionKind::MotionBlur,
        CorruptionKind::Fog,
        CorruptionKind::Contrast,
        CorruptionKind::Quantization,
        CorruptionKind::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian-noise",
            CorruptionKind::SaltPepper => "salt-pepper",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::ColorShift => "color-shift",
            CorruptionKind::MotionBlur => "motion-blur",
            CorruptionKind::Fog => "fog",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Quantization => "quantization",
            CorruptionKind::Pixelate => "pixelate",
        }
    }

    fn apply(self, x: &mut [f64], stats: &Stats, rng: &mut Rng) {
        let s = stats.std;
        match self {
            CorruptionKind::GaussianNoise => {
                let sigma = rng.random_range(0.5..1.5) * s;
                for v in x.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += sigma * z;
                }
            }
            CorruptionKind::SaltPepper => {
                let p = rng.random_range(0.10..0.25);
                for v in x.iter_mut() {
                    if rng.random_bool(p) {
                        *v = if rng.random_bool(0.5) { stats.max } else { stats.min };
                    }
                }
            }
            CorruptionKind::Brightness => {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let offset = sign * rng.random_range(1.0..2.0) * s;
                x.iter_mut().for_each(|v| *v += offset);
            }
            CorruptionKind::ColorShift => {
                for block in x.chunks_mut(BLOCK) {
                    let z: f64 = StandardNormal.sample(rng);
                    let offset = 1.2 * s * z;
                    block.iter_mut().for_each(|v| *v += offset);
                }
            }
            CorruptionKind::MotionBlur => {
                let half: usize = if rng.random_bool(0.5) { 1 } else { 2 };
                let src = x.to_vec();
                for (i, v) in x.iter_mut().enumerate() {
                    let lo = i.saturating_sub(half);
                    let hi = (i + half + 1).min(src.len());
                    *v = src[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
                }
            }
            CorruptionKind::Fog => {
                let a = rng.random_range(0.4..0.7);
                let haze = rng.random_range(0.5..1.5) * s;
                let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
                x.iter_mut().for_each(|v| *v = (1.0 - a) * *v + a * (mean + haze));
            }
            CorruptionKind::Contrast => {
                let c = rng.random_range(0.2..0.5);
                let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
                x.iter_mut().for_each(|v| *v = mean + c * (*v - mean));
            }
            CorruptionKind::Quantization => {
                let step = rng.random_range(1.0..2.0) * s;
                x.iter_mut().for_each(|v| *v = step * (*v / step).round());
            }
            CorruptionKind::Pixelate => {
                let width = if rng.random_bool(0.5) { 2 } else { 4 };
                for block in x.chunks_mut(width) {
                    let mean = block.iter().sum::<f64>() / block.len() as f64;
                    block.iter_mut().for_each(|v| *v = mean);
                }
            }
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown corruption kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    L1,
    L2,
    L3,
}

impl Severity {
    /// Largest number of kinds stacked on one sample.
    pub fn max_kinds(self) -> usize {
        match self {
            Severity::L1 => 1,
            Severity::L2 => 5,
            Severity::L3 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::L1 => "L1",
            Severity::L2 => "L2",
            Severity::L3 => "L3",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionSpec {
    pub kinds: Vec<String>,
    pub severity: Severity,
    pub fraction: f64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            kinds: CorruptionKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            severity: Severity::L2,
            fraction: 0.2,
        }
    }
}

impl CorruptionSpec {
    pub fn parsed_kinds(&self) -> Result<Vec<CorruptionKind>> {
        let kinds = self.kinds.iter().map(|k| k.parse()).collect::<Result<Vec<CorruptionKind>>>()?;
        if kinds.is_empty() {
            return Err(Error::Config("corruption needs at least one kind".into()));
        }
        Ok(kinds)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::Config(format!("corruption fraction must lie in [0, 1], got {}", self.fraction)));
        }
        self.parsed_kinds().map(|_| ())
    }

    pub fn corrupted_count(&self, n: usize) -> usize {
        (self.fraction * n as f64).floor() as usize
    }
}

/// Dataset-wide statistics that set corruption magnitudes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stats {
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(inputs: &Tensor) -> Stats {
        let v = inputs.values();
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Stats {
            std: var.sqrt().max(1e-12),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corrupted {
    pub inputs: Tensor,
    pub mask: Vec<bool>,
    /// Kinds applied to each sample, in application order.
    pub applied: Vec<Vec<CorruptionKind>>,
}

impl Corrupted {
    pub fn corrupted_indices(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect()
    }
}

/// Corrupts exactly `⌊fraction·n⌋` rows of `inputs`; the rest stay bitwise
/// unchanged.
pub fn apply_corruption(inputs: &Tensor, spec: &CorruptionSpec, rng: &mut Rng) -> Result<Corrupted> {
    spec.validate()?;
    let kinds = spec.parsed_kinds()?;
    let (n, _) = inputs.dims2();
    let stats = Stats::of(inputs);
    let mut out = inputs.clone();
    let mut mask = vec![false; n];
    let mut applied = vec![Vec::new(); n];
    let mut chosen = sample(rng, n, spec.corrupted_count(n)).into_vec();
    chosen.sort_unstable();
    let cap = spec.severity.max_kinds().min(kinds.len());
    let cols = inputs.cols();
    for i in chosen {
        mask[i] = true;
        let count = rng.random_range(1..=cap);
        let row = &mut out.values_mut()[i * cols..(i + 1) * cols];
        for j in sample(rng, kinds.len(), count) {
            kinds[j].apply(row, &stats, rng);
            applied[i].push(kinds[j]);
        }
    }
    Ok(Corrupted { inputs: out, mask, applied })
}
