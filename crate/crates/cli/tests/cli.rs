use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn poolopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poolopt"))
        .args(args)
        .env_remove("POOLOPT_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_config(search: &str) -> Value {
    json!({
        "name": format!("small_{search}"),
        "catalog": fixtures().join("small_a_catalog.json"),
        "workload": {"arrival_rate": 300.0, "num_queries": 2000},
        "qos": {"latency_target_ms": 40.0, "satisfaction_quantile": 0.99},
        "search": search,
        "budget": 12,
        "seeds": [1, 2],
        "oracle": true
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(dir: &Path, config: &Value, out: &str) -> PathBuf {
    let cfg = write_config(dir, &format!("{out}.json"), config);
    let out_dir = dir.join(out);
    ok(poolopt(&[
        "run",
        cfg.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
    ]));
    out_dir
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_convergence_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &small_config("bayesian"), "r");
    for seed in [1, 2] {
        let csv = std::fs::read_to_string(out.join(format!("convergence_seed{seed}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("iteration,"));
        assert!(lines.count() >= 1);
        assert!(out.join(format!("landscape_seed{seed}.csv")).exists());
    }
    let s = summary(&out);
    assert_eq!(s["search"], "bayesian");
    let runs = s["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    for r in runs {
        assert!(r["samples_used"].as_u64().unwrap() <= 12);
        assert!(r["optimum_config"].is_string());
        assert!(r["exploration_cost_pct_of_exhaustive"].as_f64().unwrap() <= 100.0);
    }
    assert!(out.join("meta.json").exists());
}

#[test]
fn exhaustive_landscape_covers_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config("exhaustive");
    cfg["catalog"] = json!({
        "types": [
            {"name": "fast", "price_per_hour": 1.0, "latency_profile": [[1, 2.0], [64, 10.0]]},
            {"name": "slow", "price_per_hour": 0.3, "latency_profile": [[1, 6.0], [64, 30.0]]}
        ],
        "upper_bounds": [2, 2]
    });
    cfg.as_object_mut().unwrap().remove("budget");
    cfg["seeds"] = json!([3]);
    let out = run(tmp.path(), &cfg, "ex");
    let csv = std::fs::read_to_string(out.join("landscape_seed3.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9);
    let s = summary(&out);
    assert_eq!(s["runs"][0]["samples_used"], 9);
}

#[test]
fn malformed_config_names_field() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config("bayesian");
    cfg["workload"]["arrival_rate"] = json!("lots");
    let p = write_config(tmp.path(), "bad.json", &cfg);
    let out = poolopt(&[
        "run",
        p.to_str().unwrap(),
        "--output",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("workload.arrival_rate"), "{err}");

    std::fs::write(&p, "{ not json").unwrap();
    let out = poolopt(&["run", p.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not valid JSON"));
}

#[test]
fn unknown_search_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config("bayesian");
    cfg["search"] = json!("annealing");
    let p = write_config(tmp.path(), "bad.json", &cfg);
    let out = poolopt(&["run", p.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("search"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run(tmp.path(), &small_config("bayesian"), "a");
    let b = run(tmp.path(), &small_config("bayesian"), "b");
    for name in [
        "summary.json",
        "convergence_seed1.csv",
        "convergence_seed2.csv",
        "landscape_seed1.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn overrides_and_seed_flag_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config("random"));
    let out = tmp.path().join("o");
    ok(poolopt(&[
        "run",
        cfg.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--seeds",
        "7,8,9",
        "--set",
        "budget=5",
    ]));
    let s = summary(&out);
    assert_eq!(s["budget"], 5);
    let seeds: Vec<u64> = s["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, vec![7, 8, 9]);
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config("hill_climb"));
    let root = tmp.path().join("runs_root");
    let out = Command::new(env!("CARGO_BIN_EXE_poolopt"))
        .args(["run", cfg.to_str().unwrap()])
        .env("POOLOPT_OUTPUT_DIR", &root)
        .output()
        .unwrap();
    ok(out);
    assert!(root.join("small_hill_climb").join("summary.json").exists());
}

#[test]
fn compare_single_run_one_row_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config("rsm");
    cfg["seeds"] = json!([4]);
    let out = run(tmp.path(), &cfg, "rsm");
    let res = ok(poolopt(&["compare", out.to_str().unwrap()]));
    let text = String::from_utf8(res.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "searcher,seed,samples_to_optimum,exploration_cost_pct,qos_violating_samples"
    );
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("rsm,4,"));
}

#[test]
fn compare_several_runs_to_file() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run(tmp.path(), &small_config("bayesian"), "a");
    let b = run(tmp.path(), &small_config("random"), "b");
    let table = tmp.path().join("t.csv");
    ok(poolopt(&[
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "-o",
        table.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(table).unwrap();
    assert_eq!(text.lines().count(), 1 + 4);
    assert!(text.contains("\nrandom,2,"));
}

#[test]
fn compare_missing_summary_names_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("nothing_here");
    std::fs::create_dir(&empty).unwrap();
    let out = poolopt(&["compare", empty.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing_here"));
}

#[test]
fn compare_rejects_different_fixtures() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run(tmp.path(), &small_config("bayesian"), "a");
    let mut other = small_config("bayesian");
    other["workload"]["arrival_rate"] = json!(250.0);
    let b = run(tmp.path(), &other, "b");
    let out = poolopt(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not comparable"));
}

#[test]
fn oracle_writes_optimum_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config("bayesian"));
    let out = tmp.path().join("o");
    ok(poolopt(&["oracle", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(out.join("oracle.json")).unwrap()).unwrap();
    let seeds = doc["seeds"].as_array().unwrap();
    assert_eq!(seeds.len(), 2);
    for s in seeds {
        assert_eq!(s["grid_size"], 25);
        assert!(s["optimum_config"].is_string());
    }
    assert!(out.join("landscape_seed2.csv").exists());
}

#[test]
fn scale_event_logs_detection_and_reoptimizes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config("bayesian");
    cfg["workload"]["num_queries"] = json!(4000);
    cfg["budget"] = json!(25);
    cfg["seeds"] = json!([1]);
    cfg["scale_event"] = json!({"factor": 2.0, "at_query_index": 2000});
    let out = run(tmp.path(), &cfg, "scale");
    let csv = std::fs::read_to_string(out.join("scale_events.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "seed,event_time,old_lambda,new_lambda,transfer_set_size,pruned_by_transfer,samples_to_new_optimum"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "1");
    let event_time: f64 = row[1].parse().expect("monitor fired");
    let pre_change_duration = 2000.0 / 300.0;
    assert!(event_time > pre_change_duration * 0.8, "{event_time}");
    assert_eq!(row[2], "300");
    assert_eq!(row[3], "600");
    assert!(!row[6].is_empty());
    assert!(out.join("convergence_seed1_after_scale.csv").exists());
}

#[test]
fn run_without_oracle_simulates_directly() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config("bayesian");
    cfg["oracle"] = json!(false);
    let out = run(tmp.path(), &cfg, "plain");
    assert!(!out.join("landscape_seed1.csv").exists());
    let s = summary(&out);
    let r = &s["runs"][0];
    assert!(r["optimum_config"].is_null());
    assert!(r["samples_to_optimum"].is_null());

    // same trace, same answers as the oracle-backed run
    let with = run(tmp.path(), &small_config("bayesian"), "with");
    assert_eq!(summary(&with)["runs"][0]["best_config"], r["best_config"]);
}
