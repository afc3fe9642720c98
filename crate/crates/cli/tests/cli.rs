mod common;

use std::fs::File;
use std::path::Path;

use common::*;
use msa_cli::config::{ExperimentConfig, GridSpec};
use msa_cli::estimate::{read_probability_csv, read_test_report};
use msa_cli::output::{read_series_csv, read_summary_csv};
use msa_cli::pipeline::run_experiment;
use msa_cli::{parse_times, parse_transition};
use msa_core::pseudo::Target;

fn smoke() -> ExperimentConfig {
    ExperimentConfig::load(&config_path("determinism_smoke.json")).unwrap()
}

fn stderr(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn shipped_configs_validate() {
    for entry in std::fs::read_dir(config_path("")).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
    }
}

#[test]
fn config_hash_ignores_formatting_defaults_and_output() {
    let text = std::fs::read_to_string(config_path("determinism_smoke.json")).unwrap();
    let base = ExperimentConfig::from_json(&text).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let compact = ExperimentConfig::from_json(&value.to_string()).unwrap();
    assert_eq!(base.hash(), compact.hash());

    value["alpha"] = 0.05.into();
    value["epsilon"] = 1.into();
    value["out"] = "somewhere/else".into();
    let explicit = ExperimentConfig::from_json(&value.to_string()).unwrap();
    assert_eq!(base.hash(), explicit.hash());
    assert_eq!(base.hash().len(), 64);

    value["seed"] = 8.into();
    assert_ne!(base.hash(), ExperimentConfig::from_json(&value.to_string()).unwrap().hash());
}

#[test]
fn unknown_fields_are_rejected() {
    let mut value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(config_path("determinism_smoke.json")).unwrap()).unwrap();
    value["landmark"] = 1.0.into();
    assert!(ExperimentConfig::from_json(&value.to_string()).is_err());
}

#[test]
fn transition_task_requires_a_landmark_time() {
    let mut cfg = smoke();
    cfg.task = msa_core::pseudo::Task::Tp;
    cfg.s = None;
    let err = cfg.validate().unwrap_err();
    assert_eq!(err.to_string(), "field `s` is required for task tp");

    // through the binary: exit 1 and a manifest recording the failed stage
    let dir = tempfile::tempdir().unwrap();
    let mut value = serde_json::to_value(&cfg).unwrap();
    value.as_object_mut().unwrap().remove("s");
    let config = dir.path().join("tp.json");
    std::fs::write(&config, value.to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let out = msa(&["run", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("field `s` is required for task tp"), "{}", stderr(&out));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
    assert_eq!(manifest["stages"][0]["stage"], "config");
    assert_eq!(manifest["stages"][0]["status"], "failed");
}

#[test]
fn grid_specs_parse() {
    assert_eq!(
        GridSpec::parse("0:2:5").unwrap(),
        GridSpec::Linspace {
            start: 0.0,
            stop: 2.0,
            points: 5
        }
    );
    assert!(GridSpec::parse("0:2").is_err());
    assert_eq!(parse_transition("2->3").unwrap(), (2, 3));
    assert!(parse_transition("2-3").is_err());
    assert_eq!(parse_times("0.5, 1,2").unwrap(), vec![0.5, 1.0, 2.0]);
    assert!(parse_times("1,x").is_err());
}

#[test]
fn run_outputs_round_trip_through_the_readers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke();
    cfg.out = Some(dir.path().to_path_buf());
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.manifest.status, "success");
    assert!(out.manifest.stages.iter().all(|s| s.status == "ok"));
    for f in &out.manifest.files {
        assert!(dir.path().join(f).is_file(), "{f} listed but missing");
    }

    let (targets, rows) = read_summary_csv(File::open(dir.path().join("summary.csv")).unwrap()).unwrap();
    assert_eq!(targets, ["S1", "S2", "S3", "S4"]);
    let summary = &out.summary;
    assert_eq!(rows.len(), 2 * summary.candidates.len());
    for c in &summary.candidates {
        for (metric, values, avg) in [("iBS", &c.target_ibs, c.mean_ibs), ("iAUC", &c.target_iauc, c.mean_iauc)] {
            let row = rows.iter().find(|r| r.model == c.name && r.metric == metric).unwrap();
            for (got, want) in row.values.iter().zip(values.iter()).chain([(&row.avg, &avg)]) {
                match (got, want) {
                    (Some(g), Some(w)) => assert!((g - w).abs() < 1e-6, "{} {metric}: {g} vs {w}", c.name),
                    (None, None) => {}
                    other => panic!("{} {metric}: {other:?}", c.name),
                }
            }
        }
    }

    let grid = out.manifest.data.as_ref().unwrap().grid.clone();
    assert_eq!(grid.len(), 10);
    for c in &summary.candidates {
        let series = read_series_csv(File::open(dir.path().join(format!("series_{}.csv", c.name))).unwrap()).unwrap();
        assert_eq!(series.len(), 4 * grid.len());
        assert_eq!(series[0].target, Target::State(1));
        assert_eq!(series.iter().take(grid.len()).map(|r| r.time).collect::<Vec<_>>(), grid);
        assert!(series.iter().all(|r| r.brier.is_none_or(|b| (0.0..=1.0).contains(&b))));
    }
    let best = out.manifest.best_model.as_deref().unwrap();
    assert!(best.starts_with("mspseudo-"));
    assert!(dir.path().join(format!("checkpoints/{best}.json")).is_file());

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], cfg.hash());
    assert_eq!(manifest["seeds"]["master"], 7);
    assert_eq!(manifest["data"]["weighting"], "ipcw");
}

fn simulate_into(dir: &Path) {
    let out = msa(&[
        "simulate",
        "--family",
        "linear-markov",
        "--n",
        "300",
        "--tau",
        "5",
        "--censoring-rate",
        "0.3",
        "--seed",
        "3",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["records.csv", "covariates.csv", "graph.json", "truth/records.csv"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
}

fn data_args(dir: &Path) -> Vec<String> {
    ["--data", "records.csv", "--covariates", "covariates.csv", "--graph", "graph.json"]
        .chunks(2)
        .flat_map(|p| [p[0].to_string(), dir.join(p[1]).display().to_string()])
        .collect()
}

fn msa_with(head: &[&str], dir: &Path, tail: &[&str]) -> std::process::Output {
    let data = data_args(dir);
    let mut args: Vec<&str> = head.to_vec();
    args.extend(data.iter().map(String::as_str));
    args.extend(tail);
    msa(&args)
}

#[test]
fn estimate_commands_write_well_formed_tables() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path());

    let out = msa_with(&["estimate", "aj"], dir.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_probability_csv(out.stdout.as_slice()).unwrap();
    assert_eq!(rows.len(), 3 * 30);
    for k in 1..=3 {
        assert_eq!(rows.iter().filter(|r| r.state == k && r.from.is_none()).count(), 30);
    }
    for m in 0..30 {
        let sum: f64 = (0..3).map(|k| rows[k * 30 + m].probability).sum();
        assert!((sum - 1.0).abs() < 1e-10);
    }

    let out = msa_with(&["estimate", "lmaj"], dir.path(), &["--landmark-s", "1", "--grid", "1.5:4:7"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_probability_csv(out.stdout.as_slice()).unwrap();
    assert!(rows.iter().all(|r| r.from.is_some() && r.time > 1.0));
    assert_eq!(rows.len() % 7, 0);

    let out = msa_with(&["estimate", "test"], dir.path(), &["--permutations", "50"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (method, statistic, dof, p) = read_test_report(out.stdout.as_slice()).unwrap();
    assert_eq!(method, "ca");
    assert!(statistic >= 0.0 && dof >= 1 && (0.0..=1.0).contains(&p));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);

    let out = msa_with(&["estimate", "test"], dir.path(), &["--method", "logrank"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--transition"));

    let out = msa_with(&["estimate", "test"], dir.path(), &["--method", "logrank", "--transition", "2->3", "--permutations", "50"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (method, _, _, p) = read_test_report(out.stdout.as_slice()).unwrap();
    assert_eq!(method, "logrank");
    assert!(p > 0.0 && p <= 1.0);
}

#[test]
fn induced_censoring_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path());
    let out_dir = dir.path().join("censored");
    let out = msa_with(
        &["censor"],
        dir.path(),
        &["--mode", "induced", "--rate", "0.6", "--seed", "1", "--out", out_dir.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let graph = msa_core::data::io::read_graph(&out_dir.join("graph.json")).unwrap();
    let ds = msa_core::data::io::load_dataset(&out_dir.join("records.csv"), None, graph, None).unwrap();
    assert_eq!(ds.len(), 300);
    assert!((ds.censoring_rate() - 0.6).abs() <= 0.02, "{}", ds.censoring_rate());

    let out = msa_with(&["censor"], dir.path(), &["--mode", "incremental", "--rate", "0.6", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unreadable_inputs_exit_with_status_one() {
    let out = msa(&["run", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: "));
    let out = msa(&["estimate", "aj", "--data", "/nonexistent.csv", "--graph", "/nonexistent.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fixture_pseudo_values_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let (data, graph) = write_illness_death(dir.path());
    let out = msa(&[
        "estimate",
        "pseudo",
        "--data",
        data.to_str().unwrap(),
        "--graph",
        graph.to_str().unwrap(),
        "--grid",
        "1:2.5:4",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = msa_core::pseudo::read_pseudo_rows(out.stdout.as_slice()).unwrap();
    assert_eq!(rows.len(), 3 * 3 * 4);
    let get = |id: &str, k: usize| {
        rows.iter()
            .find(|r| r.id == id && r.target == Target::State(k) && r.time == 2.5)
            .unwrap()
            .value
    };
    assert!((get("A", 3) - 1.0).abs() < 1e-12 && get("A", 1).abs() < 1e-12);
    assert!((get("C", 1) - 1.0).abs() < 1e-12);

    let out = msa(&[
        "estimate",
        "pseudo",
        "--data",
        data.to_str().unwrap(),
        "--graph",
        graph.to_str().unwrap(),
        "--task",
        "tp",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--landmark-s"));
}
