//! `evimerge` command line: staged runs and the one-shot pipeline.
//!
//! Exit status is 0 on success, 1 for invalid input and 2 for failures
//! during a run. Errors print one `CODE: detail` line on stderr.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use evimerge::archive::{load_archive, merge_parameters, save_archive, MergeWeights};
use evimerge::bench::pipeline::{self, run_prepared, Cache, Prepared};
use evimerge::bench::scenario::{Scenario, Variant};
use evimerge::bench::store::{self, models_dir};
use evimerge::evidential::EvidentialHead;
use evimerge::router::{score_aux_batches, train_bd_merging, train_static_adaptive, write_loss_trace, BDConfig, RouterNet};
use evimerge::tensor::Tensor;
use evimerge::Result;

#[derive(Parser)]
#[command(name = "evimerge", version, about = "Evidence-driven merging of fine-tuned models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario TOML; built-in defaults when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Run seed; defaults to the scenario's first seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Working and output directory.
    #[arg(long, default_value = "evimerge-out")]
    out: PathBuf,
    /// Override a scenario field, e.g. `--set tasks.num_tasks=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StaticMethod {
    UniformAverage,
    TaskArithmetic,
    StaticAdaptive,
}

#[derive(Subcommand)]
enum Command {
    /// Sample tasks, corrupt the test split and build the merging pool.
    Generate(Common),
    /// Pretrain the base model and fine-tune one model per task.
    Finetune(Common),
    /// Train the evidential head on the merging pool.
    TrainHead(Common),
    /// Score adjacency discrepancies for every merging batch.
    ComputeAds(Common),
    /// Train the debiased router.
    TrainRouter(Common),
    /// Build a single merged model with static weights.
    Merge {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: StaticMethod,
    },
    /// Evaluate every configured method on the clean and corrupted tests.
    Evaluate(Common),
    /// Run ablation variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Variants to run; the scenario's list when omitted.
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// Run every stage for every seed and write the reports.
    Pipeline(Common),
    /// Print an archive's entry table as JSON.
    ArchiveInspect { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("{}: {detail}", e.code());
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

struct Ctx {
    scenario: Scenario,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn new(c: &Common) -> Result<Ctx> {
        let base = match &c.scenario {
            Some(p) => Scenario::load(p)?,
            None => Scenario::default(),
        };
        let scenario = base.with_overrides(&c.overrides)?;
        let seed = c.seed.unwrap_or(scenario.seeds[0]);
        Ok(Ctx { scenario, seed, out: c.out.clone() })
    }

    fn prepared(&self) -> Result<Prepared> {
        store::load_prepared(&self.out, &self.scenario, self.seed)
    }

    fn bd_config(&self) -> BDConfig {
        BDConfig { seed: self.seed, ..self.scenario.merging.clone() }
    }

    fn model_path(&self, name: &str) -> PathBuf {
        models_dir(&self.out).join(name)
    }

    fn head(&self) -> Result<EvidentialHead> {
        EvidentialHead::from_archive(&load_archive(self.model_path("head.evmg"))?)
    }

    fn optional<T>(&self, name: &str, parse: impl FnOnce(&evimerge::archive::ParameterArchive) -> Result<T>) -> Result<Option<T>> {
        let path = self.model_path(name);
        if path.exists() {
            Ok(Some(parse(&load_archive(path)?)?))
        } else {
            Ok(None)
        }
    }
}

fn merging_pool(prep: &Prepared) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = prep.aux.iter().flat_map(|t| t.row_iter().map(<[f64]>::to_vec)).collect();
    Tensor::from_rows(&rows)
}

fn write_trace(out: &Path, name: &str, trace: &[evimerge::router::LossRecord]) -> Result<()> {
    let dir = out.join("traces");
    std::fs::create_dir_all(&dir)?;
    write_loss_trace(trace, std::fs::File::create(dir.join(format!("{name}.csv")))?)
}

/// Writes to stdout; a closed pipe downstream is not an error.
fn emit(text: &str) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    emit(&serde_json::to_string_pretty(v)?)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(c) => {
            let ctx = Ctx::new(&c)?;
            let data = pipeline::generate_data(&ctx.scenario, ctx.seed)?;
            store::save_data(&ctx.out, ctx.seed, &data)?;
            print_json(&serde_json::json!({
                "seed": ctx.seed,
                "tasks": data.tasks.len(),
                "unified_labels": ctx.scenario.tasks.unified_label_count(),
                "data": store::data_dir(&ctx.out),
            }))
        }
        Command::Finetune(c) => {
            let ctx = Ctx::new(&c)?;
            let data = store::load_data(&ctx.out, ctx.seed)?;
            let prep = pipeline::train_models(&ctx.scenario, data, ctx.seed)?;
            store::save_models(&ctx.out, &prep.base, &prep.finetuned)?;
            print_json(&serde_json::json!({ "seed": ctx.seed, "models": models_dir(&ctx.out) }))
        }
        Command::TrainHead(c) => {
            let ctx = Ctx::new(&c)?;
            let prep = ctx.prepared()?;
            let head = pipeline::fit_head(&prep.network, &prep.base, &merging_pool(&prep)?, &ctx.scenario.head, ctx.seed)?;
            save_archive(&head.to_archive(prep.network.layer_count() as u32), ctx.model_path("head.evmg"))?;
            print_json(&serde_json::json!({ "head": ctx.model_path("head.evmg") }))
        }
        Command::ComputeAds(c) => {
            let ctx = Ctx::new(&c)?;
            let prep = ctx.prepared()?;
            let scored = score_aux_batches(&prep.network, &prep.base, &ctx.head()?, &merging_pool(&prep)?, &ctx.bd_config())?;
            let dir = ctx.out.join("ads");
            std::fs::create_dir_all(&dir)?;
            let mut batches = Vec::new();
            for (b, (indices, batch)) in scored.iter().enumerate() {
                batch.write_csv(std::fs::File::create(dir.join(format!("batch{b}.csv")))?)?;
                batches.push(serde_json::json!({ "batch": b, "samples": indices.len(), "pairs": batch.records.len(), "epsilon": batch.epsilon }));
            }
            print_json(&serde_json::json!({ "ads": dir, "batches": batches }))
        }
        Command::TrainRouter(c) => {
            let ctx = Ctx::new(&c)?;
            let prep = ctx.prepared()?;
            let trained = train_bd_merging(&prep.network, &prep.base, &prep.vectors, &merging_pool(&prep)?, &ctx.head()?, &ctx.bd_config())?;
            save_archive(&trained.router.to_archive(), ctx.model_path("router.evmg"))?;
            write_trace(&ctx.out, "bd-merging", &trained.trace)?;
            let (first, last) = (trained.trace.first(), trained.trace.last());
            print_json(&serde_json::json!({
                "router": ctx.model_path("router.evmg"),
                "initial_l_bd": first.map(|r| r.l_bd),
                "final_l_bd": last.map(|r| r.l_bd),
            }))
        }
        Command::Merge { common, method } => {
            let ctx = Ctx::new(&common)?;
            let prep = ctx.prepared()?;
            let k = prep.vectors.len();
            let (name, weights) = match method {
                StaticMethod::UniformAverage => ("uniform-average", MergeWeights::uniform(k)),
                StaticMethod::TaskArithmetic => {
                    ("task-arithmetic", MergeWeights::task_wise(vec![ctx.scenario.baselines.task_arithmetic_scale; k]))
                }
                StaticMethod::StaticAdaptive => {
                    let (w, trace) = train_static_adaptive(&prep.network, &prep.base, &prep.vectors, &merging_pool(&prep)?, &ctx.bd_config())?;
                    save_archive(&store::weights_to_archive(&w)?, ctx.model_path("static-weights.evmg"))?;
                    write_trace(&ctx.out, "static-adaptive", &trace)?;
                    ("static-adaptive", w)
                }
            };
            let merged = merge_parameters(&prep.base, &prep.vectors, &weights)?.with_metadata("role", "merged").with_metadata("method", name);
            let path = ctx.model_path(&format!("merged-{name}.evmg"));
            save_archive(&merged, &path)?;
            print_json(&serde_json::json!({ "merged": path, "weights": weights.values() }))
        }
        Command::Evaluate(c) => {
            let ctx = Ctx::new(&c)?;
            let prep = ctx.prepared()?;
            let mut scenario = ctx.scenario.clone();
            scenario.ablations.clear();
            scenario.unseen.enabled = false;
            scenario.seeds = vec![ctx.seed];
            let cache = Cache {
                head: ctx.optional("head.evmg", EvidentialHead::from_archive)?,
                router: ctx.optional("router.evmg", RouterNet::from_archive)?,
                static_weights: ctx.optional("static-weights.evmg", store::weights_from_archive)?,
            };
            let outcome = run_prepared(&scenario, &prep, &cache)?;
            report(&ctx.out.join("evaluation"), &scenario, outcome)
        }
        Command::Ablate { common, variants } => {
            let ctx = Ctx::new(&common)?;
            let prep = ctx.prepared()?;
            let mut scenario = ctx.scenario.clone();
            if !variants.is_empty() {
                scenario.ablations = variants.iter().map(|v| Variant::parse(v)).collect::<Result<_>>()?;
            }
            scenario.methods.clear();
            scenario.unseen.enabled = false;
            scenario.seeds = vec![ctx.seed];
            let cache = Cache { head: ctx.optional("head.evmg", EvidentialHead::from_archive)?, ..Cache::default() };
            let outcome = run_prepared(&scenario, &prep, &cache)?;
            report(&ctx.out.join("ablation"), &scenario, outcome)
        }
        Command::Pipeline(c) => {
            let mut ctx = Ctx::new(&c)?;
            if let Some(seed) = c.seed {
                ctx.scenario.seeds = vec![seed];
            }
            let outcomes = pipeline::run_scenario(&ctx.scenario, pipeline::thread_cap()?)?;
            let files = pipeline::write_outputs(&ctx.out, &ctx.scenario, &outcomes)?;
            print_summary(&pipeline::summarize(&ctx.scenario, &outcomes))?;
            eprintln!("wrote {} files to {}", files.len(), ctx.out.display());
            Ok(())
        }
        Command::ArchiveInspect { path } => {
            let archive = load_archive(&path)?;
            emit(&serde_json::to_string_pretty(&archive.inspect())?)
        }
    }
}

fn report(dir: &Path, scenario: &Scenario, outcome: pipeline::SeedOutcome) -> Result<()> {
    let outcomes = [outcome];
    pipeline::write_outputs(dir, scenario, &outcomes)?;
    print_summary(&pipeline::summarize(scenario, &outcomes))
}

fn print_summary(summary: &pipeline::Summary) -> Result<()> {
    let mut text = format!("{:<18} {:<18} {:>8} {:>8}", "method", "condition", "mean", "std");
    for e in &summary.entries {
        text += &format!("\n{:<18} {:<18} {:>8.4} {:>8.4}", e.method, e.condition, e.mean, e.std);
    }
    emit(&text)
}
