//! End-to-end runs: data, base and task models, baselines, BD-Merging,
//! ablations and the held-out-task protocol, for every seed of a scenario.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::archive::{compute_task_vector, MergeWeights, ParameterArchive, TaskVector, FORMAT_VERSION};
use crate::adjacency::AdsVariant;
use crate::error::{Error, Result};
use crate::evidential::{train_head, EvidentialHead};
use crate::nn::MlpSpec;
use crate::rng::substream;
use crate::router::{RouterNet, train_bd_merging, train_static_adaptive, write_loss_trace, BDConfig, LossRecord, TrainedRouter};
use crate::tensor::Tensor;

use super::corruption::{apply_corruption, Corrupted};
use super::eval::{evaluate_merged, EvalReport, Model};
use super::scenario::{HeadSection, LabelSpace, Method, Scenario, Variant};
use super::store::DataBundle;
use super::tasks::{generate_tasks, Dataset, TaskData};
use super::train::{finetune_task_model, train_classifier};

pub const CLEAN: &str = "clean";
pub const CORRUPTED: &str = "corrupted";
pub const CORRUPTED_SUBSET: &str = "corrupted-subset";
pub const SEEN: &str = "seen";
pub const UNSEEN: &str = "unseen";

/// Everything that precedes merging for one seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub seed: u64,
    pub network: MlpSpec,
    pub tasks: Vec<TaskData>,
    pub base: ParameterArchive,
    pub finetuned: Vec<ParameterArchive>,
    pub vectors: Vec<TaskVector>,
    /// Per task, the test inputs after the corruption protocol.
    pub test_corrupted: Vec<Corrupted>,
    /// Per task, the auxiliary inputs the merger sees.
    pub aux: Vec<Tensor>,
}

pub fn pretrain_base(scenario: &Scenario, tasks: &[TaskData], seed: u64) -> Result<ParameterArchive> {
    let network = scenario.network();
    let init = network.init(&mut substream(seed, "init"));
    let parts: Vec<&Dataset> = tasks.iter().map(|t| &t.finetune).collect();
    let pooled = Dataset::concat(&parts)?;
    let base = train_classifier(&network, &init, &pooled, &scenario.model.pretrain, None, &mut substream(seed, "pretrain"))?;
    Ok(base.with_metadata("role", "base"))
}

pub fn finetune_all(scenario: &Scenario, tasks: &[TaskData], base: &ParameterArchive, seed: u64) -> Result<Vec<ParameterArchive>> {
    let network = scenario.network();
    tasks
        .iter()
        .map(|t| {
            let mut rng = substream(seed, &format!("finetune/task{}", t.spec.id));
            let labels = match scenario.model.finetune_labels {
                LabelSpace::Task => Some(t.spec.labels[0]..t.spec.labels[t.spec.labels.len() - 1] + 1),
                LabelSpace::Unified => None,
            };
            finetune_task_model(&network, base, &t.finetune, &scenario.model.finetune, labels, &mut rng)
        })
        .collect()
}

pub fn corrupt_tests(scenario: &Scenario, tasks: &[TaskData], seed: u64) -> Result<Vec<Corrupted>> {
    tasks
        .iter()
        .map(|t| apply_corruption(&t.test.inputs, &scenario.corruption, &mut substream(seed, &format!("corruption/task{}", t.spec.id))))
        .collect()
}

pub fn aux_inputs(scenario: &Scenario, tasks: &[TaskData], seed: u64) -> Result<Vec<Tensor>> {
    tasks
        .iter()
        .map(|t| {
            if scenario.aux.corrupted {
                let mut rng = substream(seed, &format!("aux-corruption/task{}", t.spec.id));
                Ok(apply_corruption(&t.aux.inputs, &scenario.corruption, &mut rng)?.inputs)
            } else {
                Ok(t.aux.inputs.clone())
            }
        })
        .collect()
}

/// Tasks, corrupted test inputs and the merging pool for one seed.
pub fn generate_data(scenario: &Scenario, seed: u64) -> Result<DataBundle> {
    scenario.validate()?;
    let tasks = generate_tasks(&scenario.tasks, seed)?;
    Ok(DataBundle {
        test_corrupted: corrupt_tests(scenario, &tasks, seed)?,
        aux: aux_inputs(scenario, &tasks, seed)?,
        tasks,
    })
}

/// Base and fine-tuned models on top of generated data.
pub fn train_models(scenario: &Scenario, data: DataBundle, seed: u64) -> Result<Prepared> {
    let base = pretrain_base(scenario, &data.tasks, seed)?;
    let finetuned = finetune_all(scenario, &data.tasks, &base, seed)?;
    let vectors = finetuned.iter().map(|f| compute_task_vector(&base, f)).collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        seed,
        network: scenario.network(),
        tasks: data.tasks,
        base,
        finetuned,
        vectors,
        test_corrupted: data.test_corrupted,
        aux: data.aux,
    })
}

pub fn prepare(scenario: &Scenario, seed: u64) -> Result<Prepared> {
    train_models(scenario, generate_data(scenario, seed)?, seed)
}

impl Prepared {
    /// Auxiliary inputs of every task stacked into one merging pool.
    pub fn aux_pool(&self) -> Result<Tensor> {
        stack(&self.aux.iter().collect::<Vec<_>>())
    }
}

fn stack(parts: &[&Tensor]) -> Result<Tensor> {
    let cols = parts.first().map_or(0, |t| t.cols());
    let mut values = Vec::new();
    for p in parts {
        values.extend_from_slice(p.values());
    }
    Tensor::new(vec![values.len() / cols.max(1), cols], values)
}

/// Trains the evidential head on pooled base features of `aux`.
pub fn fit_head(network: &MlpSpec, base: &ParameterArchive, aux: &Tensor, section: &HeadSection, seed: u64) -> Result<EvidentialHead> {
    let config = section.config(network.output_dim);
    let head = EvidentialHead::init(network.pooled_dim(), network.output_dim, &mut substream(seed, "head-init"));
    let (head, _) = train_head(network, base, head, aux, &config, &section.training(), &mut substream(seed, "head-training"))?;
    Ok(head)
}

/// One merging problem: a subset of task vectors and the auxiliary pool.
struct Merger<'a> {
    scenario: &'a Scenario,
    network: &'a MlpSpec,
    base: &'a ParameterArchive,
    vectors: Vec<TaskVector>,
    aux: Tensor,
    seed: u64,
}

impl<'a> Merger<'a> {
    fn main(scenario: &'a Scenario, prep: &'a Prepared) -> Result<Self> {
        Ok(Merger {
            scenario,
            network: &prep.network,
            base: &prep.base,
            vectors: prep.vectors.clone(),
            aux: prep.aux_pool()?,
            seed: prep.seed,
        })
    }

    fn bd_config(&self) -> BDConfig {
        BDConfig { seed: self.seed, ..self.scenario.merging.clone() }
    }

    fn head(&self, section: &HeadSection) -> Result<EvidentialHead> {
        fit_head(self.network, self.base, &self.aux, section, self.seed)
    }

    fn bd(&self, head: &EvidentialHead, config: &BDConfig) -> Result<TrainedRouter> {
        train_bd_merging(self.network, self.base, &self.vectors, &self.aux, head, config)
    }

    fn static_adaptive(&self) -> Result<(MergeWeights, Vec<LossRecord>)> {
        train_static_adaptive(self.network, self.base, &self.vectors, &self.aux, &self.bd_config())
    }

    fn task_arithmetic(&self) -> MergeWeights {
        MergeWeights::task_wise(vec![self.scenario.baselines.task_arithmetic_scale; self.vectors.len()])
    }
}

/// Results of one seed.
#[derive(Clone, Debug, Default)]
pub struct SeedOutcome {
    pub seed: u64,
    pub reports: Vec<EvalReport>,
    pub traces: BTreeMap<String, Vec<LossRecord>>,
    pub timing: BTreeMap<String, f64>,
}

struct Conditions<'a> {
    sets: Vec<(&'static str, Vec<(String, Dataset)>)>,
    _marker: std::marker::PhantomData<&'a ()>,
}

fn main_conditions(prep: &Prepared) -> Conditions<'_> {
    let clean = prep.tasks.iter().map(|t| (format!("task{}", t.spec.id), t.test.clone())).collect();
    let corrupted = prep
        .tasks
        .iter()
        .zip(&prep.test_corrupted)
        .map(|(t, c)| (format!("task{}", t.spec.id), Dataset { inputs: c.inputs.clone(), labels: t.test.labels.clone() }))
        .collect();
    let mut sets = vec![(CLEAN, clean), (CORRUPTED, corrupted)];
    if prep.test_corrupted.iter().all(|c| c.mask.iter().any(|m| *m)) {
        let subset = prep
            .tasks
            .iter()
            .zip(&prep.test_corrupted)
            .map(|(t, c)| {
                let idx = c.corrupted_indices();
                let labels = idx.iter().map(|&i| t.test.labels[i]).collect();
                (format!("task{}", t.spec.id), Dataset { inputs: c.inputs.select_rows(&idx), labels })
            })
            .collect();
        sets.push((CORRUPTED_SUBSET, subset));
    }
    Conditions { sets, _marker: std::marker::PhantomData }
}

fn evaluate_all(network: &MlpSpec, model: &Model<'_>, conditions: &Conditions<'_>, method: &str, seed: u64) -> Result<Vec<EvalReport>> {
    conditions
        .sets
        .iter()
        .map(|(cond, sets)| {
            let refs: Vec<(String, &Dataset)> = sets.iter().map(|(n, d)| (n.clone(), d)).collect();
            evaluate_merged(network, model, &refs, method, cond, seed)
        })
        .collect()
}

/// Each fine-tuned model on its own task.
fn evaluate_individual(prep: &Prepared, conditions: &Conditions<'_>) -> Result<Vec<EvalReport>> {
    conditions
        .sets
        .iter()
        .map(|(cond, sets)| {
            let mut per_task = Vec::new();
            let start = Instant::now();
            for (k, (name, d)) in sets.iter().enumerate() {
                let r = evaluate_merged(&prep.network, &Model::Archive(&prep.finetuned[k]), &[(name.clone(), d)], "individual", cond, prep.seed)?;
                per_task.push((name.clone(), r.average));
            }
            let average = per_task.iter().map(|(_, a)| a).sum::<f64>() / per_task.len() as f64;
            Ok(EvalReport {
                method: "individual".into(),
                condition: cond.to_string(),
                per_task,
                average,
                seed: prep.seed,
                wall_clock_seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

fn timed<T>(timing: &mut BTreeMap<String, f64>, key: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    *timing.entry(key.to_string()).or_default() += start.elapsed().as_secs_f64();
    out
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Contract(m) => Error::Contract(format!("{name}: {m}")),
        Error::Config(m) => Error::Config(format!("{name}: {m}")),
        other => other,
    })
}

pub fn run_seed(scenario: &Scenario, seed: u64) -> Result<SeedOutcome> {
    let start = Instant::now();
    let prep = stage("prepare", prepare(scenario, seed))?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut out = run_prepared(scenario, &prep, &Cache::default())?;
    out.timing.insert("prepare".into(), elapsed);
    Ok(out)
}

/// Previously trained merging components; anything missing is trained.
#[derive(Clone, Debug, Default)]
pub struct Cache {
    pub head: Option<EvidentialHead>,
    pub router: Option<RouterNet>,
    pub static_weights: Option<MergeWeights>,
}

/// Every method, ablation and the unseen protocol listed in `scenario`, on
/// already prepared models.
pub fn run_prepared(scenario: &Scenario, prep: &Prepared, cache: &Cache) -> Result<SeedOutcome> {
    let seed = prep.seed;
    let mut out = SeedOutcome { seed, ..SeedOutcome::default() };
    let conditions = main_conditions(prep);
    let merger = Merger::main(scenario, prep)?;
    let needs = |m: Method| scenario.methods.contains(&m);
    let wants = |v: Variant| scenario.ablations.contains(&v);

    let head = match &cache.head {
        Some(h) => h.clone(),
        None => stage("train-head", timed(&mut out.timing, "train-head", || merger.head(&scenario.head)))?,
    };
    let bd = if cache.router.is_none() && (needs(Method::BdMerging) || wants(Variant::Full)) {
        Some(stage("train-router", timed(&mut out.timing, "train-router", || merger.bd(&head, &merger.bd_config())))?)
    } else {
        None
    };
    let router = cache.router.as_ref().or(bd.as_ref().map(|t| &t.router));
    let static_w = match &cache.static_weights {
        Some(w) => Some((w.clone(), None)),
        None if needs(Method::StaticAdaptive) || wants(Variant::NoRouter) => {
            let (w, trace) = stage("static-adaptive", timed(&mut out.timing, "static-adaptive", || merger.static_adaptive()))?;
            Some((w, Some(trace)))
        }
        None => None,
    };

    let ta = merger.task_arithmetic();
    let uniform = MergeWeights::uniform(prep.vectors.len());
    for method in &scenario.methods {
        let name = method.name();
        let start = Instant::now();
        let reports = match method {
            Method::Pretrained => evaluate_all(&prep.network, &Model::Archive(&prep.base), &conditions, name, seed)?,
            Method::Individual => evaluate_individual(prep, &conditions)?,
            Method::TaskArithmetic => evaluate_all(&prep.network, &Model::Static { base: &prep.base, vectors: &prep.vectors, weights: &ta }, &conditions, name, seed)?,
            Method::UniformAverage => evaluate_all(&prep.network, &Model::Static { base: &prep.base, vectors: &prep.vectors, weights: &uniform }, &conditions, name, seed)?,
            Method::StaticAdaptive => {
                let (w, trace) = static_w.as_ref().expect("trained above");
                if let Some(trace) = trace {
                    out.traces.insert(name.into(), trace.clone());
                }
                evaluate_all(&prep.network, &Model::Static { base: &prep.base, vectors: &prep.vectors, weights: w }, &conditions, name, seed)?
            }
            Method::BdMerging => {
                if let Some(trained) = &bd {
                    out.traces.insert(name.into(), trained.trace.clone());
                }
                let router = router.expect("trained above");
                evaluate_all(&prep.network, &Model::Routed { base: &prep.base, vectors: &prep.vectors, router }, &conditions, name, seed)?
            }
        };
        *out.timing.entry(format!("evaluate/{name}")).or_default() += start.elapsed().as_secs_f64();
        out.reports.extend(reports);
    }

    for variant in &scenario.ablations {
        let name = variant.name();
        let start = Instant::now();
        let reports = match variant {
            Variant::Full => {
                let router = router.expect("trained above");
                evaluate_all(&prep.network, &Model::Routed { base: &prep.base, vectors: &prep.vectors, router }, &conditions, name, seed)?
            }
            Variant::NoRouter => {
                let (w, _) = static_w.as_ref().expect("trained above");
                evaluate_all(&prep.network, &Model::Static { base: &prep.base, vectors: &prep.vectors, weights: w }, &conditions, name, seed)?
            }
            _ => {
                let (head_v, config) = ablation_setup(*variant, &merger, &head)?;
                let trained = stage(name, merger.bd(&head_v, &config))?;
                out.traces.insert(format!("ablation-{name}"), trained.trace.clone());
                evaluate_all(&prep.network, &Model::Routed { base: &prep.base, vectors: &prep.vectors, router: &trained.router }, &conditions, name, seed)?
            }
        };
        *out.timing.entry(format!("ablation/{name}")).or_default() += start.elapsed().as_secs_f64();
        out.reports.extend(reports);
    }

    if scenario.runs_unseen() {
        let start = Instant::now();
        out.reports.extend(stage("unseen", run_unseen(scenario, prep))?);
        out.timing.insert("unseen".into(), start.elapsed().as_secs_f64());
    }
    Ok(out)
}

fn ablation_setup(variant: Variant, merger: &Merger<'_>, head: &EvidentialHead) -> Result<(EvidentialHead, BDConfig)> {
    let mut config = merger.bd_config();
    let mut h = head.clone();
    match variant {
        Variant::NoSharp => config.ads_variant = AdsVariant::NoSharp,
        Variant::NoDiv => config.ads_variant = AdsVariant::NoDiv,
        Variant::NoConf => config.ads_variant = AdsVariant::NoConf,
        Variant::NoAds => config.ads_variant = AdsVariant::Zero,
        Variant::NoLdis => config.eta = 0.0,
        Variant::NoLinv => {
            let section = HeadSection { gamma: 0.0, ..merger.scenario.head.clone() };
            h = merger.head(&section)?;
        }
        Variant::Full | Variant::NoRouter => {}
    }
    Ok((h, config))
}

/// Merges the seen tasks only and scores seen and held-out test sets.
fn run_unseen(scenario: &Scenario, prep: &Prepared) -> Result<Vec<EvalReport>> {
    let held = &scenario.unseen.held_out;
    let seen: Vec<usize> = (0..prep.tasks.len()).filter(|k| !held.contains(k)).collect();
    let vectors: Vec<TaskVector> = seen.iter().map(|&k| prep.vectors[k].clone()).collect();
    let aux_parts: Vec<&Tensor> = seen.iter().map(|&k| &prep.aux[k]).collect();
    let merger = Merger {
        scenario,
        network: &prep.network,
        base: &prep.base,
        vectors,
        aux: stack(&aux_parts)?,
        seed: prep.seed,
    };
    let set = |ks: &[usize]| -> Vec<(String, Dataset)> {
        ks.iter().map(|&k| (format!("task{k}"), prep.tasks[k].test.clone())).collect()
    };
    let conditions = Conditions { sets: vec![(SEEN, set(&seen)), (UNSEEN, set(held))], _marker: std::marker::PhantomData };
    let mut reports = Vec::new();
    let ta = merger.task_arithmetic();
    let uniform = MergeWeights::uniform(merger.vectors.len());
    for method in &scenario.methods {
        let name = method.name();
        let model_reports = match method {
            Method::Pretrained => evaluate_all(&prep.network, &Model::Archive(&prep.base), &conditions, name, prep.seed)?,
            Method::Individual => continue,
            Method::TaskArithmetic => evaluate_all(&prep.network, &Model::Static { base: &prep.base, vectors: &merger.vectors, weights: &ta }, &conditions, name, prep.seed)?,
            Method::UniformAverage => evaluate_all(&prep.network, &Model::Static { base: &prep.base, vectors: &merger.vectors, weights: &uniform }, &conditions, name, prep.seed)?,
            Method::StaticAdaptive => {
                let (w, _) = merger.static_adaptive()?;
                evaluate_all(&prep.network, &Model::Static { base: &prep.base, vectors: &merger.vectors, weights: &w }, &conditions, name, prep.seed)?
            }
            Method::BdMerging => {
                let head = merger.head(&scenario.head)?;
                let trained = merger.bd(&head, &merger.bd_config())?;
                evaluate_all(&prep.network, &Model::Routed { base: &prep.base, vectors: &merger.vectors, router: &trained.router }, &conditions, name, prep.seed)?
            }
        };
        reports.extend(model_reports);
    }
    Ok(reports)
}

/// Parallelism cap from `EVIMERGE_THREADS`; `None` means rayon's default.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("EVIMERGE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("EVIMERGE_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs every seed, in parallel across seeds; results keep seed order.
pub fn run_scenario(scenario: &Scenario, threads: Option<usize>) -> Result<Vec<SeedOutcome>> {
    scenario.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| scenario.seeds.par_iter().map(|&s| run_seed(scenario, s)).collect())
}

/// One row of the long-format result table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LongRow {
    pub method: String,
    pub condition: String,
    pub severity: String,
    pub accuracy: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryEntry {
    pub method: String,
    pub condition: String,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub severity: String,
    pub seeds: Vec<u64>,
    pub entries: Vec<SummaryEntry>,
}

/// Mean and sample standard deviation of averaged accuracy per
/// `(method, condition)`, in first-seen order.
pub fn summarize(scenario: &Scenario, outcomes: &[SeedOutcome]) -> Summary {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut values: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for o in outcomes {
        for r in &o.reports {
            let key = (r.method.clone(), r.condition.clone());
            if !values.contains_key(&key) {
                order.push(key.clone());
            }
            values.entry(key).or_default().push(r.average);
        }
    }
    let entries = order
        .into_iter()
        .map(|key| {
            let v = &values[&key];
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            SummaryEntry { method: key.0, condition: key.1, mean, std, seeds: v.len() }
        })
        .collect();
    Summary {
        scenario: scenario.name.clone(),
        severity: scenario.corruption.severity.as_str().into(),
        seeds: outcomes.iter().map(|o| o.seed).collect(),
        entries,
    }
}

#[derive(Serialize)]
struct RunRow<'a> {
    method: &'a str,
    condition: &'a str,
    severity: &'a str,
    task: &'a str,
    accuracy: f64,
    seed: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a str,
    config_hash: String,
    seeds: &'a [u64],
    crate_version: &'static str,
    archive_format_version: u32,
    files: Vec<String>,
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], written: &mut Vec<String>) -> Result<PathBuf> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, bytes)?;
    written.push(name.to_string());
    Ok(path)
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes reports, traces, the effective scenario and a manifest into `dir`.
/// Wall-clock measurements go to `timing.json` only, so every other file is
/// a pure function of the scenario.
pub fn write_outputs(dir: &Path, scenario: &Scenario, outcomes: &[SeedOutcome]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let severity = scenario.corruption.severity.as_str();
    let mut written = Vec::new();
    let mut paths = Vec::new();
    paths.push(write_file(dir, "scenario.toml", scenario.to_toml().as_bytes(), &mut written)?);
    paths.push(write_file(dir, "defaults.txt", defaults_log(scenario).as_bytes(), &mut written)?);

    let mut long = csv::Writer::from_writer(Vec::new());
    for o in outcomes {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &o.reports {
            for (task, acc) in r.per_task.iter().map(|(t, a)| (t.as_str(), *a)).chain(std::iter::once(("average", r.average))) {
                w.serialize(RunRow { method: &r.method, condition: &r.condition, severity, task, accuracy: acc, seed: o.seed })?;
            }
            long.serialize(LongRow {
                method: r.method.clone(),
                condition: r.condition.clone(),
                severity: severity.into(),
                accuracy: r.average,
                seed: o.seed,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        paths.push(write_file(dir, &format!("runs/seed{}.csv", o.seed), &bytes, &mut written)?);
        for (name, trace) in &o.traces {
            let mut buf = Vec::new();
            write_loss_trace(trace, &mut buf)?;
            paths.push(write_file(dir, &format!("traces/seed{}/{name}.csv", o.seed), &buf, &mut written)?);
        }
    }
    let bytes = long.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    paths.push(write_file(dir, "results_long.csv", &bytes, &mut written)?);
    paths.push(write_file(dir, "summary.json", &json_bytes(&summarize(scenario, outcomes))?, &mut written)?);

    let timing: BTreeMap<String, &BTreeMap<String, f64>> = outcomes.iter().map(|o| (format!("seed{}", o.seed), &o.timing)).collect();
    let mut timing_written = Vec::new();
    paths.push(write_file(dir, "timing.json", &json_bytes(&timing)?, &mut timing_written)?);

    let manifest = Manifest {
        scenario: &scenario.name,
        config_hash: scenario.config_hash(),
        seeds: &scenario.seeds,
        crate_version: env!("CARGO_PKG_VERSION"),
        archive_format_version: FORMAT_VERSION,
        files: written.clone(),
    };
    paths.push(write_file(dir, "manifest.json", &json_bytes(&manifest)?, &mut written)?);
    Ok(paths)
}

/// Human-readable list of the defaults in effect for judgement calls.
pub fn defaults_log(s: &Scenario) -> String {
    let m = &s.merging;
    let lines = [
        format!("router input: pooled last-hidden activations of the base network ({} dims)", s.network().pooled_dim()),
        "adjacency features: same pooled base activations".to_string(),
        format!("radius policy: {:?}", m.radius),
        format!("epsilon policy: {:?}", m.epsilon),
        "partition rule: d < epsilon positive, d >= epsilon negative".to_string(),
        "discrepancy scores: frozen once per fixed auxiliary batch before router training".to_string(),
        "contrastive outputs: unit-normalised merged logits".to_string(),
        format!("contrastive temperature: {}", m.temperature),
        "contrastive clamp: [1e-6, 1] on the log argument".to_string(),
        format!("eta: {}, lambda: {}, gamma: {}", m.eta, s.head.lambda, s.head.gamma),
        format!("entropy sign: {:?}, iec clip: {}, iec gradient: {}", s.head.entropy_sign, s.head.iec_clip, s.head.iec_gradient),
        format!("merge mode: {}", m.mode.as_str()),
        format!("optimiser: plain gradient descent, lr {}, batch {}, epochs {}", m.learning_rate, m.batch_size, m.epochs),
        format!("auxiliary data corrupted like the test split: {}", s.aux.corrupted),
        format!("task arithmetic scale: {}", s.baselines.task_arithmetic_scale),
        format!("corruption: {} at fraction {}", s.corruption.severity.as_str(), s.corruption.fraction),
        format!("fine-tuning label space: {:?}", s.model.finetune_labels),
        format!("held-out protocol: {}", if s.runs_unseen() { format!("tasks {:?}", s.unseen.held_out) } else { "off".into() }),
    ];
    let mut out = lines.join("\n");
    out.push('\n');
    out
}
