use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "small"
seeds = [3]

[tasks]
num_tasks = 3
classes_per_task = 2
feature_dim = 8
finetune_size = 48
aux_size = 32
test_size = 40

[model]
hidden = [8]

[head]
epochs = 5

[merging]
epochs = 3
hidden = 8

[unseen]
held_out = [2]
"#;

fn evimerge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evimerge")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_scenario(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

/// Every file under `dir` except wall-clock timings, keyed by relative path.
fn report_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timing.json" {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn help_lists_every_subcommand() {
    let o = evimerge(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in [
        "generate",
        "finetune",
        "train-head",
        "compute-ads",
        "train-router",
        "merge",
        "evaluate",
        "ablate",
        "pipeline",
        "archive-inspect",
    ] {
        assert!(text.contains(cmd), "missing {cmd} in help");
    }
}

#[test]
fn missing_scenario_is_a_validation_error() {
    let o = evimerge(&["evaluate", "--scenario", "missing.toml"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("FILE_NOT_FOUND:"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn unknown_subcommands_flags_and_keys_exit_one() {
    assert_eq!(evimerge(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(evimerge(&["pipeline", "--bogus"]).status.code(), Some(1));
    let o = evimerge(&["generate", "--set", "tasks.nope=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("INVALID_CONFIG:"));
}

#[test]
fn stages_need_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = evimerge(&["finetune", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("FILE_NOT_FOUND:"));
}

#[test]
fn pipeline_reports_are_bitwise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let before = fs::read(&scenario).unwrap();
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = evimerge(&["pipeline", "--scenario", &scenario, "--seed", "7", "--out", out.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
            report_files(&out)
        })
        .collect();
    assert!(runs[0].len() >= 7);
    assert_eq!(runs[0], runs[1]);
    assert_eq!(fs::read(&scenario).unwrap(), before);
    let manifest: serde_json::Value = serde_json::from_slice(&runs[0]["manifest.json"]).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([7]));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn staged_commands_match_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let staged = dir.path().join("staged");
    let common = ["--scenario", &scenario, "--out", staged.to_str().unwrap()];
    for cmd in ["generate", "finetune", "train-head", "compute-ads", "train-router"] {
        let o = evimerge(&[&[cmd][..], &common[..]].concat());
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
    }
    let o = evimerge(&[&["merge"][..], &common[..], &["--method", "static-adaptive"][..]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(evimerge(&[&["evaluate"][..], &common[..]].concat()).status.code(), Some(0));

    let full = dir.path().join("full");
    let o = evimerge(&["pipeline", "--scenario", &scenario, "--out", full.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let staged_rows = fs::read_to_string(staged.join("evaluation/runs/seed3.csv")).unwrap();
    let full_rows = fs::read_to_string(full.join("runs/seed3.csv")).unwrap();
    for line in staged_rows.lines() {
        assert!(full_rows.lines().any(|l| l == line), "pipeline lacks {line}");
    }
    assert!(staged_rows.contains("bd-merging,corrupted,"));

    let ads = fs::read_to_string(staged.join("ads/batch0.csv")).unwrap();
    assert!(ads.starts_with("anchor,neighbor,sharp,div,conf,ads,partition"));

    let o = evimerge(&["archive-inspect", staged.join("models/router.evmg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let table: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(table["metadata"]["role"], "router");
    assert_eq!(table["entries"].as_array().unwrap().len(), 4);
}

#[test]
fn ablate_runs_selected_variants() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let out = dir.path().join("w");
    let common = ["--scenario", &scenario, "--out", out.to_str().unwrap()];
    for cmd in ["generate", "finetune"] {
        assert_eq!(evimerge(&[&[cmd][..], &common[..]].concat()).status.code(), Some(0));
    }
    let o = evimerge(&[&["ablate"][..], &common[..], &["--variant", "no-ads", "--variant", "no-router"][..]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = fs::read_to_string(out.join("ablation/results_long.csv")).unwrap();
    assert!(rows.contains("no-ads,clean") && rows.contains("no-router,corrupted"));
    let o = evimerge(&[&["ablate"][..], &common[..], &["--variant", "no-such"][..]].concat());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn default_scenario_writes_complete_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("desk");
    let o = evimerge(&["pipeline", "--seed", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["scenario.toml", "defaults.txt", "runs/seed0.csv", "results_long.csv", "summary.json", "manifest.json", "timing.json"] {
        let len = fs::metadata(out.join(f)).map(|m| m.len()).unwrap_or(0);
        assert!(len > 0, "{f} missing or empty");
    }
    let runs = fs::read_to_string(out.join("runs/seed0.csv")).unwrap();
    assert_eq!(runs.lines().next().unwrap(), "method,condition,severity,task,accuracy,seed");
    let long = fs::read_to_string(out.join("results_long.csv")).unwrap();
    assert_eq!(long.lines().next().unwrap(), "method,condition,severity,accuracy,seed");
    for line in long.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 5);
        let acc: f64 = cols[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert_eq!(cols[2], "L2");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    let entries = summary["entries"].as_array().unwrap();
    for method in ["pretrained", "individual", "task-arithmetic", "uniform-average", "static-adaptive", "bd-merging"] {
        for cond in ["clean", "corrupted", "corrupted-subset"] {
            assert!(entries.iter().any(|e| e["method"] == method && e["condition"] == cond), "{method}/{cond}");
        }
    }
    assert!(entries.iter().all(|e| e["mean"].is_number() && e["std"].is_number()));
    let traces = out.join("traces/seed0");
    for t in ["bd-merging.csv", "static-adaptive.csv"] {
        let text = fs::read_to_string(traces.join(t)).unwrap();
        assert!(text.starts_with("epoch,l_unsup,l_dis,l_bd"));
    }
}
