//! Scenario files: TOML with every field defaulted, plus dotted overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evidential::{EntropySign, HeadConfig, HeadTraining};
use crate::nn::MlpSpec;
use crate::router::BDConfig;

use super::corruption::CorruptionSpec;
use super::tasks::TaskGenConfig;
use super::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Pretrained,
    Individual,
    TaskArithmetic,
    UniformAverage,
    StaticAdaptive,
    BdMerging,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Pretrained,
        Method::Individual,
        Method::TaskArithmetic,
        Method::UniformAverage,
        Method::StaticAdaptive,
        Method::BdMerging,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pretrained => "pretrained",
            Method::Individual => "individual",
            Method::TaskArithmetic => "task-arithmetic",
            Method::UniformAverage => "uniform-average",
            Method::StaticAdaptive => "static-adaptive",
            Method::BdMerging => "bd-merging",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoSharp,
    NoDiv,
    NoConf,
    NoAds,
    NoRouter,
    #[serde(rename = "no-linv")]
    NoLinv,
    #[serde(rename = "no-ldis")]
    NoLdis,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoSharp,
        Variant::NoDiv,
        Variant::NoConf,
        Variant::NoAds,
        Variant::NoRouter,
        Variant::NoLinv,
        Variant::NoLdis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSharp => "no-sharp",
            Variant::NoDiv => "no-div",
            Variant::NoConf => "no-conf",
            Variant::NoAds => "no-ads",
            Variant::NoRouter => "no-router",
            Variant::NoLinv => "no-linv",
            Variant::NoLdis => "no-ldis",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant {s:?}")))
    }
}

/// Label range the fine-tuning softmax runs over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSpace {
    /// Only the task's own labels, as with a per-task classifier head.
    Task,
    /// Every label of every task.
    Unified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub finetune_labels: LabelSpace,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: vec![32, 32],
            pretrain: TrainConfig { epochs: 3, learning_rate: 0.05, batch_size: 32 },
            finetune: TrainConfig { epochs: 20, learning_rate: 0.05, batch_size: 32 },
            finetune_labels: LabelSpace::Task,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadSection {
    pub lambda: f64,
    pub gamma: f64,
    pub iec_clip: bool,
    pub entropy_sign: EntropySign,
    pub iec_gradient: bool,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for HeadSection {
    fn default() -> Self {
        let h = HeadConfig::new(1);
        let t = HeadTraining::default();
        HeadSection {
            lambda: h.lambda,
            gamma: h.gamma,
            iec_clip: h.iec_clip,
            entropy_sign: h.entropy_sign,
            iec_gradient: h.iec_gradient,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
        }
    }
}

impl HeadSection {
    pub fn config(&self, unified_label_count: usize) -> HeadConfig {
        HeadConfig {
            unified_label_count,
            lambda: self.lambda,
            gamma: self.gamma,
            iec_clip: self.iec_clip,
            entropy_sign: self.entropy_sign,
            iec_gradient: self.iec_gradient,
        }
    }

    pub fn training(&self) -> HeadTraining {
        HeadTraining { epochs: self.epochs, learning_rate: self.learning_rate, batch_size: self.batch_size }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuxSection {
    /// Draw the auxiliary split from the deployment distribution, i.e. with
    /// the same corruption protocol as the test split.
    pub corrupted: bool,
}

impl Default for AuxSection {
    fn default() -> Self {
        AuxSection { corrupted: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub task_arithmetic_scale: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection { task_arithmetic_scale: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnseenSection {
    pub enabled: bool,
    pub held_out: Vec<usize>,
}

impl Default for UnseenSection {
    fn default() -> Self {
        UnseenSection { enabled: true, held_out: vec![3] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub ablations: Vec<Variant>,
    pub tasks: TaskGenConfig,
    pub model: ModelSection,
    pub corruption: CorruptionSpec,
    pub aux: AuxSection,
    pub head: HeadSection,
    pub merging: BDConfig,
    pub baselines: BaselineSection,
    pub unseen: UnseenSection,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "desk".into(),
            seeds: vec![0, 1, 2, 3, 4],
            methods: Method::ALL.to_vec(),
            ablations: Variant::ALL.to_vec(),
            tasks: TaskGenConfig::default(),
            model: ModelSection::default(),
            corruption: CorruptionSpec::default(),
            aux: AuxSection::default(),
            head: HeadSection::default(),
            merging: BDConfig::default(),
            baselines: BaselineSection::default(),
            unseen: UnseenSection::default(),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Scenario::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises to TOML")
    }

    /// Applies `key.path=value` overrides. Every key must already exist in
    /// the fully defaulted scenario; values parse as TOML, falling back to a
    /// bare string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Scenario> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            let mut node = &mut root;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
                let slot = table.get_mut(*part).ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
                if i + 1 == parts.len() {
                    *slot = value.clone();
                    break;
                }
                node = slot;
            }
        }
        let s: Scenario = root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.tasks.validate()?;
        self.model.pretrain.validate()?;
        self.model.finetune.validate()?;
        self.corruption.validate()?;
        self.merging.validate()?;
        self.head.config(self.tasks.unified_label_count()).validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("scenario needs at least one seed".into()));
        }
        if self.head.batch_size == 0 {
            return Err(Error::Config("head batch size must be positive".into()));
        }
        if self.runs_unseen() {
            let k = self.tasks.num_tasks;
            if self.unseen.held_out.is_empty() || self.unseen.held_out.len() >= k {
                return Err(Error::Config("unseen protocol must hold out at least one task and keep one".into()));
            }
            if let Some(bad) = self.unseen.held_out.iter().find(|&&t| t >= k) {
                return Err(Error::Config(format!("held-out task {bad} does not exist")));
            }
        }
        Ok(())
    }

    /// The held-out protocol needs at least two tasks; with one it is skipped.
    pub fn runs_unseen(&self) -> bool {
        self.unseen.enabled && self.tasks.num_tasks > 1
    }

    pub fn network(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.tasks.feature_dim,
            hidden: self.model.hidden.clone(),
            output_dim: self.tasks.unified_label_count(),
        }
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
