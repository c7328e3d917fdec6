use std::path::Path;
use std::process::{Command, Output};

fn hessbar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hessbar")).args(args).output().expect("run hessbar")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SIMPLEX_QP: &str = r#"{"objective": {"type": "quadratic", "q": [[100, 0], [0, 100]], "c": [0, 0]},
    "constraints": {"dense": [[1, 1]], "b": [1]}, "start": [0.9, 0.1]}"#;

#[test]
fn solve_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("p.json");
    std::fs::write(&problem, SIMPLEX_QP).unwrap();
    let out = dir.path().join("out");
    let o = hessbar(&["solve", p(&problem), "--kernel", "tsallis", "--p", "1.5", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["hba"]["termination"], "ToleranceMet");
    assert!((summary["hba"]["f_final"].as_f64().unwrap() - 25.0).abs() < 1e-6);
    assert!(out.join("trace.csv").exists() && out.join("value_vs_iter.svg").exists());

    let fit = hessbar(&["rate-fit", p(&out.join("trace.csv")), "--f-inf", "25"]);
    // Fast convergence leaves too short a trace for a fit: a data error, not a config error.
    assert_eq!(code(&fit), 1);
}

#[test]
fn understated_lipschitz_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("p.json");
    let config = dir.path().join("solver.toml");
    std::fs::write(&problem, SIMPLEX_QP).unwrap();
    std::fs::write(&config, "lipschitz_l = 1e-9\n[armijo]\nmax_backtracks = 1\n").unwrap();
    let out = dir.path().join("out");
    let o = hessbar(&["solve", p(&problem), "--config", p(&config), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    // The partial trace is still written.
    assert!(out.join("trace.csv").exists());
}

#[test]
fn invalid_configurations_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("p.json");
    std::fs::write(&problem, SIMPLEX_QP.replace("0.9, 0.1", "0.9, 0.2")).unwrap();
    let out = p(dir.path());
    assert_eq!(code(&hessbar(&["solve", p(&problem), "--out", out])), 3, "infeasible start");
    assert_eq!(code(&hessbar(&["solve", p(&problem)])), 3, "missing --out");
    assert_eq!(code(&hessbar(&["frobnicate"])), 3);
    assert_eq!(code(&hessbar(&["benchmark", "--suite", "lp", "--out", out])), 3);
    assert_eq!(code(&hessbar(&["solve", p(&problem), "--kernel", "mixture", "--out", out])), 3, "missing --gamma");

    std::fs::write(&problem, SIMPLEX_QP).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[armijo]\nmu = 2.0\n").unwrap();
    assert_eq!(code(&hessbar(&["solve", p(&problem), "--config", p(&bad), "--out", out])), 3, "mu out of range");
    assert_eq!(code(&hessbar(&["solve", p(&problem), "--plots", "pie", "--out", out])), 3);
    assert_eq!(code(&hessbar(&["solve", p(&problem), "--plots", "trajectory2d", "--out", out])), 3, "2-D plot on a non-box problem");
    assert_eq!(code(&hessbar(&["tap-gen", "--vertices", "3", "--od-pairs", "1", "--paths", "1", "--attachment-m", "5", "--out", out])), 3);
}

#[test]
fn tap_round_trip_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let tap = dir.path().join("tap.json");
    let o = hessbar(&["tap-gen", "--vertices", "20", "--od-pairs", "8", "--paths", "4", "--seed", "3", "--out", p(&tap)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("run");
    let o = hessbar(&["solve", p(&tap), "--md", "--max-iter", "200", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("md_trace.csv").exists());
    let svg = dir.path().join("gap.svg");
    let o = hessbar(&[
        "plot",
        p(&out.join("trace.csv")),
        p(&out.join("md_trace.csv")),
        "--kind",
        "log-log-gap",
        "--out",
        p(&svg),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("<polyline").count(), 2);
}

#[test]
fn run_config_and_rate_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    let out = dir.path().join("ros");
    std::fs::write(
        &cfg,
        format!(
            "name = \"ros\"\noutput_dir = {:?}\nplots = [\"log_log_gap\", \"trajectory2d\"]\n[problem]\nsource = \"rosenbrock\"\n[solver]\nmax_iterations = 2000\n",
            p(&out)
        ),
    )
    .unwrap();
    let o = hessbar(&["run", p(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("trajectory.svg").exists() && out.join("trajectory.csv").exists());
    let fit = hessbar(&["rate-fit", p(&out.join("trace.csv")), "--f-inf", "0"]);
    assert_eq!(code(&fit), 0);
    let report: serde_json::Value = serde_json::from_slice(&fit.stdout).unwrap();
    assert!(report["rho_fitted"].as_f64().unwrap() > 0.0);
    assert_eq!(report["rho_predicted"], 1.0);
}
