use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diamond_bench::output::read_samples_csv;
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_diamond-bench");

fn two_component() -> Value {
    json!({
        "weights": [0.45, 0.55],
        "means": [[-1.2, 0.4], [1.0, -0.5]],
        "covs": [[[0.35, 0.1], [0.1, 0.25]], [[0.3, -0.05], [-0.05, 0.4]]]
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("DIAMOND_BENCH_THREADS", n),
        None => cmd.env_remove("DIAMOND_BENCH_THREADS"),
    };
    cmd.output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args, None);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn metrics(dir: &Path) -> Vec<Value> {
    fs::read_to_string(dir.join("metrics.jsonl")).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn report_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    names
}

#[test]
fn minimal_sample_run_writes_four_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &json!({"mixture": {"weights": [1.0], "means": [[0.5]], "covs": [[[0.8]]]}, "algorithm": {"name": "sample", "n": 64, "n_steps": 20}}),
    );
    let out_dir = tmp.path().join("out");
    run_ok(&["sample", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(report_files(&out_dir), ["config-echo.json", "metrics.jsonl", "report.svg", "samples.csv"]);
    let samples = read_samples_csv(&out_dir.join("samples.csv")).unwrap();
    assert_eq!((samples.len(), samples[0].len()), (64, 1));
    assert!(fs::read_to_string(out_dir.join("samples.csv")).unwrap().starts_with("x0\n"));
    let echo: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("config-echo.json")).unwrap()).unwrap();
    assert_eq!(echo["algorithm"]["name"], "sample");
    assert_eq!(echo["output"], out_dir.to_str().unwrap());
    assert!(fs::read_to_string(out_dir.join("report.svg")).unwrap().starts_with("<svg"));
    assert_eq!(metrics(&out_dir)[0]["kind"], "summary");
}

#[test]
fn same_seed_reproduces_samples_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &json!({
            "mixture": two_component(),
            "reward": {"kind": "linear", "c": [1.0, 0.5]},
            "algorithm": {"name": "guide", "n": 24, "guidance": {"n_steps": 10, "particles": 2}},
            "inner_steps": 8
        }),
    );
    let go = |name: &str, seed: &str, threads: &str| {
        let dir = tmp.path().join(name);
        let out = run(
            &["guide", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", dir.to_str().unwrap()],
            Some(threads),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.join("samples.csv")).unwrap()
    };
    let a = go("a", "5", "1");
    let b = go("b", "5", "3");
    let c = go("c", "6", "2");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn fig2_report_has_the_expected_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("fig2");
    run_ok(&["report", "fig2", "--out", dir.to_str().unwrap()]);
    let row = &metrics(&dir)[0];
    assert_eq!(row["kind"], "fig2");
    assert!(row["max_deviation_from_one_at_t_prime_one"].as_f64().unwrap() < 1e-12);
    assert_eq!(row["nondecreasing_in_t_prime"], true);
    let svg = fs::read_to_string(dir.join("report.svg")).unwrap();
    assert!(svg.matches("<rect").count() > 64 * 64);
    let cells = read_samples_csv(&dir.join("samples.csv")).unwrap();
    assert!(cells.iter().all(|c| c[0] < c[1] && (0.0..=1.0).contains(&c[2])));

    let near_diagonal = |grid: usize| {
        let cfg =
            write_config(tmp.path(), &format!("g{grid}.json"), &json!({"algorithm": {"name": "report", "grid": grid}}));
        let dir = tmp.path().join(format!("g{grid}"));
        run_ok(&["report", "fig2", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
        metrics(&dir)[0]["mean_r_star_next_to_diagonal"].as_f64().unwrap()
    };
    let (coarse, fine) = (near_diagonal(8), near_diagonal(128));
    assert!(fine < coarse, "r* next to the diagonal should shrink with the grid: {coarse} -> {fine}");
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = write_config(tmp.path(), "u.json", &json!({"mixture": two_component(), "sneed": 3}));
    let mismatch =
        write_config(tmp.path(), "m.json", &json!({"mixture": two_component(), "algorithm": {"name": "smc"}}));
    let bad_cov = write_config(
        tmp.path(),
        "b.json",
        &json!({"mixture": {"weights": [1.0], "means": [[0.0, 0.0]], "covs": [[[1.0, 3.0], [3.0, 1.0]]]}}),
    );
    for cfg in [&unknown, &mismatch, &bad_cov] {
        let out =
            run(&["sample", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()], None);
        assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run(&["sample", "--out", tmp.path().join("y").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_domain_errors_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &json!({"mixture": two_component(), "algorithm": {"name": "ddpm-step", "n": 4, "t": 0.7, "t_prime": 0.4}}),
    );
    let out =
        run(&["ddpm-step", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_config_file_exits_with_one() {
    let out = run(&["sample", "--config", "/nonexistent/c.json"], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn every_subcommand_runs_on_a_small_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("oracle", json!({"name": "oracle", "n": 32, "n_report": 3})),
        ("sample", json!({"name": "sample", "n": 16, "n_steps": 4, "kernel": "diamond"})),
        ("sample", json!({"name": "sample", "n": 16, "n_steps": 4, "kernel": "naive"})),
        ("sample", json!({"name": "sample", "n": 16, "n_steps": 4, "kernel": "reference"})),
        ("posterior", json!({"name": "posterior", "n": 16, "t": 0.4, "x_t": [0.1, 0.2]})),
        ("posterior", json!({"name": "posterior", "n": 16, "method": "exact"})),
        ("ddpm-step", json!({"name": "ddpm-step", "n": 16})),
        ("value", json!({"name": "value", "particles": 32, "seeds": 2})),
        ("value", json!({"name": "value", "particles": 32, "seeds": 1, "estimator": "weighted", "probes": 2})),
        ("value", json!({"name": "value", "estimator": "denoiser", "seeds": 1})),
        ("value", json!({"name": "value", "estimator": "exact", "seeds": 1})),
        (
            "guide",
            json!({"name": "guide", "n": 8, "estimator": "weighted", "guidance": {"n_steps": 6, "particles": 2}}),
        ),
        ("guide", json!({"name": "guide", "n": 8, "estimator": "exact", "guidance": {"n_steps": 6}})),
        ("smc", json!({"name": "smc", "particles": 16, "n_steps": 4, "inner_samples": 4})),
        ("search", json!({"name": "search", "runs": 3, "particles": 4, "n_steps": 4, "inner_samples": 4})),
        ("bon", json!({"name": "bon", "n": 8, "budget": 5})),
    ];
    for (i, (command, algorithm)) in cases.iter().enumerate() {
        let cfg = write_config(
            tmp.path(),
            &format!("c{i}.json"),
            &json!({
                "mixture": two_component(),
                "reward": {"kind": "linear", "c": [0.6, -0.3]},
                "algorithm": algorithm,
                "inner_steps": 6
            }),
        );
        let dir = tmp.path().join(format!("o{i}"));
        run_ok(&[command, "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
        let files = report_files(&dir);
        for f in ["config-echo.json", "metrics.jsonl", "report.svg", "samples.csv"] {
            assert!(files.iter().any(|n| n == f), "{command} {i}: missing {f}");
        }
        assert!(!metrics(&dir).is_empty(), "{command} {i}: no metrics");
        assert!(!read_samples_csv(&dir.join("samples.csv")).unwrap().is_empty());
    }
}

#[test]
fn value_rows_carry_the_documented_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &json!({"mixture": two_component(), "reward": {"kind": "linear", "c": [0.6, -0.3]}, "inner_steps": 8}),
    );
    let dir = tmp.path().join("o");
    run_ok(&[
        "value",
        "--config",
        cfg.to_str().unwrap(),
        "--estimator",
        "posterior",
        "--particles",
        "500",
        "--seeds",
        "3",
        "--out",
        dir.to_str().unwrap(),
    ]);
    let rows = metrics(&dir);
    assert_eq!(rows.len(), 3);
    for row in &rows {
        for key in ["estimator", "K", "value", "grad", "ess", "stderr"] {
            assert!(row.get(key).is_some(), "missing {key}");
        }
        assert_eq!(row["K"], 500);
        let (v, exact, se) =
            (row["value"].as_f64().unwrap(), row["exact_value"].as_f64().unwrap(), row["stderr"].as_f64().unwrap());
        assert!((v - exact).abs() <= 5.0 * se, "{v} vs {exact} ({se})");
    }
}

#[test]
fn distilled_checkpoint_drives_other_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let train = write_config(
        tmp.path(),
        "d.json",
        &json!({
            "mixture": two_component(),
            "algorithm": {"name": "distill", "hidden": [16, 16], "n_freq": 2, "n_iters": 40, "batch": 16,
                          "teacher_steps": 4, "eval_pairs": 2, "eval_samples": 32, "chain_steps": 2}
        }),
    );
    let dir = tmp.path().join("d");
    run_ok(&["distill", "--config", train.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    let ckpt = dir.join("model.ckpt");
    assert!(ckpt.exists());
    let kinds: Vec<Value> = metrics(&dir).iter().map(|r| r["kind"].clone()).collect();
    for kind in ["loss", "held-out", "chained"] {
        assert!(kinds.contains(&json!(kind)), "missing {kind} rows");
    }

    let use_map = write_config(
        tmp.path(),
        "v.json",
        &json!({"mixture": two_component(), "reward": {"kind": "linear", "c": [0.6, -0.3]},
                "algorithm": {"name": "value", "particles": 16, "seeds": 1}}),
    );
    let out = tmp.path().join("v");
    run_ok(&[
        "value",
        "--config",
        use_map.to_str().unwrap(),
        "--map",
        ckpt.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let echo: Value = serde_json::from_str(&fs::read_to_string(out.join("config-echo.json")).unwrap()).unwrap();
    assert_eq!(echo["map"], ckpt.to_str().unwrap());

    let one_d = write_config(
        tmp.path(),
        "w.json",
        &json!({"mixture": {"weights": [1.0], "means": [[0.0]], "covs": [[[1.0]]]}, "algorithm": {"name": "posterior", "n": 4}}),
    );
    let res = run(
        &[
            "posterior",
            "--config",
            one_d.to_str().unwrap(),
            "--map",
            ckpt.to_str().unwrap(),
            "--out",
            tmp.path().join("w").to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(res.status.code(), Some(2), "dimension mismatch is a config error");
}

#[test]
fn invalid_thread_count_is_a_config_error() {
    let out = run(&["report", "fig2", "--out", "/tmp/unused-fig2"], Some("zero"));
    assert_eq!(out.status.code(), Some(2));
}
