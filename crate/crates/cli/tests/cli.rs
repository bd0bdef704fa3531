use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mcpp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcpp")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mcpp(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

fn gen(dir: &Path, name: &str, mode: &str, seed: &str) -> String {
    let w = path(dir, name);
    ok(&[
        "gen", "--nodes", "4", "--shape", "chain", "--models", "2", "--mode", mode, "--pool-size", "32", "--seed",
        seed, "--out", &w,
    ]);
    w
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.json", "empirical", "3");
    let b = gen(dir.path(), "b.json", "empirical", "3");
    let read = |p: &str| fs::read_to_string(p).unwrap();
    assert_eq!(read(&a).replace("a.pools", "b.pools"), read(&b));
    assert_eq!(
        read(&path(dir.path(), "a.pools.jsonl")),
        read(&path(dir.path(), "b.pools.jsonl"))
    );
    assert_eq!(ok(&["validate", "--workflow", &a]).trim(), "[]");
}

#[test]
fn validate_reports_violations_and_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let w = path(dir.path(), "bad.json");
    fs::write(
        &w,
        r#"{"nodes":[{"id":0},{"id":1}],"edges":[[0,1],[1,0]],
            "models":[{"id":"m","price_per_1k_tokens_usd":0.001,"tokens_per_second":10.0}],
            "mode":"parametric",
            "profiles":[{"node":0,"model":"m","p":1.5,"mean_tokens":10},{"node":1,"model":"m","p":0.5,"mean_tokens":10}]}"#,
    )
    .unwrap();
    let out = mcpp(&["validate", "--workflow", &w]);
    assert_eq!(out.status.code(), Some(1));
    let violations: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(violations.as_array().unwrap().len() >= 2);

    fs::write(&w, "{ not json").unwrap();
    assert_eq!(mcpp(&["validate", "--workflow", &w]).status.code(), Some(2));
}

#[test]
fn plan_and_run_print_json() {
    let dir = tempfile::tempdir().unwrap();
    let w = gen(dir.path(), "w.json", "parametric", "1");
    let plan: serde_json::Value = serde_json::from_str(&ok(&[
        "plan", "--workflow", &w, "--budget", "1", "--deadline", "600", "--sims", "8", "--seed", "2",
    ]))
    .unwrap();
    assert_eq!(plan["status"], "chosen");
    assert_eq!(plan["candidates"], 8);
    assert!(plan["table"].as_array().unwrap().len() <= 8);

    let run: serde_json::Value = serde_json::from_str(&ok(&[
        "run", "--workflow", &w, "--method", "retry", "--model", "m1", "--width", "4", "--budget", "1", "--deadline",
        "600", "--seed", "2",
    ]))
    .unwrap();
    assert!(run["success"].is_boolean());
    assert!(!run["rounds"].as_array().unwrap().is_empty());
    assert!(
        !mcpp(&["run", "--workflow", &w, "--method", "uniform", "--budget", "1", "--deadline", "60"])
            .status
            .success()
    );
}

#[test]
fn eval_writes_one_row_per_method_and_cell() {
    let dir = tempfile::tempdir().unwrap();
    let w = gen(dir.path(), "w.json", "empirical", "1");
    let out = path(dir.path(), "r.csv");
    ok(&[
        "eval", "--workflow", &w, "--methods", "mcpp", "--budgets", "0.5", "--deadlines", "600", "--sims", "4",
        "--n-eval", "8", "--seed", "1", "--out", &out,
    ]);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "method,model_set,width_set,budget_usd,deadline_s,n_eval,n_sim,success_rate,ci_radius,mean_planner_s,seed"
    );
    assert!(lines[1].starts_with("mcpp,m0+m1,1+4+16+64,0.5,600.0,8,4,"));

    let json = path(dir.path(), "r.json");
    ok(&[
        "eval", "--workflow", &w, "--methods", "retry", "--budgets", "0.5", "--deadlines", "600", "--n-eval", "8",
        "--out", &json, "--format", "json",
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    // best-of row plus two models times four widths
    assert_eq!(report["rows"].as_array().unwrap().len(), 9);
}

#[test]
fn eval_with_planner_pools() {
    let dir = tempfile::tempdir().unwrap();
    let w = gen(dir.path(), "w.json", "empirical", "4");
    let noisy = path(dir.path(), "noisy.jsonl");
    ok(&[
        "noise",
        "--kind",
        "tokens",
        "--sigma",
        "0.2",
        "--seed",
        "1",
        "--in",
        &path(dir.path(), "w.pools.jsonl"),
        "--out",
        &noisy,
    ]);
    let out = path(dir.path(), "r.csv");
    ok(&[
        "eval",
        "--workflow",
        &w,
        "--methods",
        "mcpp",
        "--budgets",
        "0.5",
        "--deadlines",
        "600",
        "--sims",
        "4",
        "--n-eval",
        "4",
        "--planner-pools",
        &noisy,
        "--out",
        &out,
    ]);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 2);
}

#[test]
fn noise_keeps_every_record() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "w.json", "empirical", "2");
    let pools = path(dir.path(), "w.pools.jsonl");
    let noisy = path(dir.path(), "n.jsonl");
    let report = path(dir.path(), "n.json");
    ok(&[
        "noise", "--kind", "success", "--sigma", "0.3", "--eps", "0.001", "--seed", "5", "--in", &pools, "--out",
        &noisy, "--report", &report,
    ]);
    let count = |p: &str| fs::read_to_string(p).unwrap().lines().count();
    assert_eq!(count(&pools), count(&noisy));
    let details: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(details.as_array().unwrap().len(), 8);
    assert!(
        !mcpp(&["noise", "--kind", "success", "--sigma", "-1", "--in", &pools, "--out", &noisy])
            .status
            .success()
    );
}

#[test]
fn oracle_emits_state_values() {
    let dir = tempfile::tempdir().unwrap();
    let w = gen(dir.path(), "w.json", "parametric", "1");
    let out = path(dir.path(), "v.json");
    ok(&[
        "oracle", "--workflow", &w, "--budget", "0.02", "--deadline", "60", "--widths", "1,2", "--out", &out,
    ]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let states = v["states"].as_array().unwrap();
    assert!(!states.is_empty());
    let initial = v["initial_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&initial));
    for s in states {
        assert!(s["optimal"].as_f64().unwrap() >= s["best_base"].as_f64().unwrap());
    }

    let e = gen(dir.path(), "e.json", "empirical", "1");
    assert!(
        !mcpp(&["oracle", "--workflow", &e, "--budget", "1", "--deadline", "60", "--out", &out])
            .status
            .success()
    );
}
