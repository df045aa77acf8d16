use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iss-newton"))
        .args(args)
        .env("ISS_NEWTON_OUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn summary_schema() -> jsonschema::Validator {
    let schema: Value = serde_json::from_str(include_str!("../schema/summary.schema.json")).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_valid(summary: &Value) {
    let validator = summary_schema();
    let errors: Vec<String> = validator.iter_errors(summary).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "schema violations: {errors:?}\n{summary:#}");
}

#[test]
fn list_problems_plain_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), &["list-problems"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["scalar-eq", "rosenbrock-circle", "box-qp", "affine-probe", "sqp-bfgs"] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
    let out = bin(dir.path(), &["list-problems", "--json"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["problems"].as_array().unwrap().iter().any(|p| p["name"] == "box-qp"));
}

#[test]
fn newton_on_scalar_eq_converges_fast() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(
        dir.path(),
        &["solve", "--problem", "scalar-eq", "--algorithm", "newton"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("scalar-eq-newton.summary.json"));
    assert_valid(&summary);
    assert_eq!(summary["termination"], "converged");
    assert!(summary["final_residual"].as_f64().unwrap() < 1e-12);
    assert!(summary["iterations"].as_u64().unwrap() <= 8);
    let trace = fs::read_to_string(dir.path().join("scalar-eq-newton.csv")).unwrap();
    assert!(trace.starts_with("k,z1,z2,v1,v2,residual,error_to_zbar\n"));
}

#[test]
fn alm_with_random_disturbance_is_iss() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(
        dir.path(),
        &[
            "solve",
            "--problem",
            "scalar-eq",
            "--algorithm",
            "alm",
            "--rho",
            "10",
            "--disturbance",
            "random:1e-3:seed=7",
            "--name",
            "alm",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("alm.summary.json"));
    assert_valid(&summary);
    assert_eq!(summary["iss"]["feasible"], true);
    assert!(summary["iss"]["alpha"].as_f64().unwrap() < 1.0);
    assert_eq!(summary["checks"]["dual_update"], true);
    assert_eq!(summary["disturbance"], "random:1e-3:seed=7");
}

#[test]
fn every_algorithm_writes_a_valid_summary() {
    let dir = tempfile::tempdir().unwrap();
    let runs: &[(&str, &str, &[&str])] = &[
        ("scalar-root", "newton", &[]),
        ("scalar-root", "quasi-newton", &["--disturbance", "random:1e-2:seed=1"]),
        ("scalar-root", "pgd", &["--alpha", "0.4"]),
        ("rosenbrock-circle", "sqp", &[]),
        ("rosenbrock-circle", "sqp-bfgs", &["--b0", "solution-hessian"]),
        ("box-qp", "sqp-dfp", &[]),
        ("scalar-eq", "seq-convex", &[]),
        ("two-constraint", "alm", &["--disturbance", "decaying:1e-2:0.5"]),
        ("coupled-cubic", "multistep", &["--inner", "newton:2"]),
    ];
    for (problem, alg, extra) in runs {
        let mut args = vec!["solve", "--problem", problem, "--algorithm", alg];
        args.extend_from_slice(extra);
        let out = bin(dir.path(), &args);
        assert_eq!(
            code(&out),
            0,
            "{problem} {alg}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let summary = read_json(&dir.path().join(format!("{problem}-{alg}.summary.json")));
        assert_valid(&summary);
        assert_eq!(summary["algorithm"], *alg);
    }
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(
        dir.path(),
        &["solve", "--problem", "scalar-eq", "--algorithm", "newtonn"],
    );
    assert_eq!(code(&out), 2);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("sqp-bfgs") && err.contains("multistep"), "{err}");

    let out = bin(dir.path(), &["solve", "--problem", "no-such", "--algorithm", "newton"]);
    assert_eq!(code(&out), 2);

    let out = bin(
        dir.path(),
        &[
            "sweep",
            "--problem",
            "scalar-eq",
            "--algorithm",
            "alm",
            "--rho-grid",
            "",
        ],
    );
    assert_eq!(code(&out), 2);

    let out = bin(dir.path(), &["sweep", "--problem", "scalar-eq", "--algorithm", "alm"]);
    assert_eq!(code(&out), 2);

    let out = bin(dir.path(), &["frobnicate"]);
    assert_eq!(code(&out), 2);

    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        "problem = \"scalar-eq\"\nalgorithm = \"newton\"\nunknown_key = 1\n",
    )
    .unwrap();
    let out = bin(dir.path(), &["solve", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn diverging_run_exits_one_and_keeps_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(
        dir.path(),
        &[
            "solve",
            "--problem",
            "scalar-root",
            "--algorithm",
            "pgd",
            "--alpha",
            "5",
            "--name",
            "div",
        ],
    );
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stdout));
    let summary = read_json(&dir.path().join("div.summary.json"));
    assert_valid(&summary);
    assert_eq!(summary["status"], "failed");
    assert!(dir.path().join("div.csv").exists());

    // the linear-programming step of sequential convexification is not unique here
    let out = bin(
        dir.path(),
        &["solve", "--problem", "box-qp", "--algorithm", "seq-convex"],
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not unique"));
}

#[test]
fn out_dir_flag_beats_environment() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let out = bin(
        env_dir.path(),
        &[
            "solve",
            "--problem",
            "scalar-root",
            "--algorithm",
            "newton",
            "--out-dir",
            flag_dir.path().to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 0);
    assert!(flag_dir.path().join("scalar-root-newton.csv").exists());
    assert!(!env_dir.path().join("scalar-root-newton.csv").exists());
}

#[test]
fn sweep_from_config_file_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    fs::write(
        &config,
        r#"
problem = "box-qp"
algorithm = "newton"
disturbance = "random:1e-3:seed=0"

[sweep]
delta = [1e-4, 1e-3, 1e-2]
seeds = [1, 2, 3, 4, 5]
workers = 3
"#,
    )
    .unwrap();
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = bin(
            dir.path(),
            &["sweep", "--config", config.to_str().unwrap(), "--name", name],
        );
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        files.push(fs::read(dir.path().join(format!("{name}.sweep.csv"))).unwrap());
    }
    assert_eq!(files[0], files[1]);

    let mut reader = csv::Reader::from_reader(files[0].as_slice());
    let headers = reader.headers().unwrap().clone();
    let col = |n: &str| headers.iter().position(|h| h == n).unwrap();
    let mut by_delta: Vec<(f64, f64)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[col("iss_feasible")], "true");
        by_delta.push((
            rec[col("delta")].parse().unwrap(),
            rec[col("asymptotic_error")].parse().unwrap(),
        ));
    }
    assert_eq!(by_delta.len(), 15);
    let mean = |d: f64| {
        let xs: Vec<f64> = by_delta.iter().filter(|(x, _)| *x == d).map(|(_, e)| *e).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    for (lo, hi) in [(1e-4, 1e-3), (1e-3, 1e-2)] {
        let ratio = mean(hi) / mean(lo);
        assert!((5.0..=20.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn probe_reports_bound() {
    let dir = tempfile::tempdir().unwrap();
    for problem in ["affine-probe", "scalar-eq"] {
        let out = bin(dir.path(), &["probe", "--problem", problem, "--samples", "50"]);
        assert_eq!(code(&out), 0);
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["bound_holds"], true);
        assert!(dir.path().join(format!("{problem}.probe.json")).exists());
    }
}

#[test]
fn inline_problem_file() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("tiny-qp.toml");
    fs::write(
        &problem,
        r#"
lower = [0.0, 0.0]
upper = [1.0, 1.0]
x0 = [0.5, 0.5]
solution_x = [0.5, 0.5]
solution_y = [-0.5]

[objective]
kind = "quadratic"
q = [[1.0, 0.0], [0.0, 1.0]]
c = [0.0, 0.0]

[[constraints]]
kind = "linear"
a = [1.0, 1.0]
b = 1.0
"#,
    )
    .unwrap();
    let out = bin(
        dir.path(),
        &["solve", "--problem", problem.to_str().unwrap(), "--algorithm", "sqp"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("tiny-qp-sqp.summary.json"));
    assert_valid(&summary);
    assert_eq!(summary["termination"], "converged");
    assert_eq!(summary["problem"], "tiny-qp");
}
