//! End-to-end checks that drive the compiled binary the way a user would.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use krpsgd_core::io::{load_model, load_tensor};

fn krpsgd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_krpsgd"))
        .args(args)
        .current_dir(dir)
        .env_remove("KRPSGD_SEED")
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn generate_small(dir: &Path, name: &str) {
    let out = krpsgd(
        dir,
        &[
            "generate", "--dims", "8", "8", "5", "--rank", "4", "--spread", "2", "--magnitude",
            "6", "--noise", "0.05", "--seed", "7", "--out", name,
        ],
    );
    assert_success(&out);
}

#[test]
fn generate_writes_tensor_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "data.cpt");

    let x = load_tensor(dir.path().join("data.cpt")).unwrap();
    assert_eq!(x.dims(), &[8, 8, 5]);

    let sidecar = fs::read_to_string(dir.path().join("data.cpt.txt")).unwrap();
    for key in [
        "i=8",
        "j=5",
        "rank=4",
        "spread=2",
        "magnitude=6",
        "noise=0.05",
        "seed=7",
        "spread_used=2,2,2",
        "injected_rows_1=",
        "injected_rows_3=",
    ] {
        assert!(sidecar.contains(key), "sidecar is missing '{key}':\n{sidecar}");
    }
}

#[test]
fn generate_is_reproducible_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "a.cpt");
    generate_small(dir.path(), "b.cpt");
    assert_eq!(
        fs::read(dir.path().join("a.cpt")).unwrap(),
        fs::read(dir.path().join("b.cpt")).unwrap()
    );
}

#[test]
fn generate_notes_zero_spread_and_short_third_mode() {
    let dir = tempfile::tempdir().unwrap();
    let out = krpsgd(
        dir.path(),
        &[
            "generate", "--dims", "6", "6", "2", "--rank", "4", "--spread", "0", "--seed", "1",
            "--out", "flat.cpt",
        ],
    );
    assert_success(&out);
    let sidecar = fs::read_to_string(dir.path().join("flat.cpt.txt")).unwrap();
    assert!(sidecar.contains("note=planted columns are empty; effective rank is 1"));

    let out = krpsgd(
        dir.path(),
        &[
            "generate", "--dims", "6", "6", "2", "--rank", "4", "--spread", "4", "--seed", "1",
            "--out", "capped.cpt",
        ],
    );
    assert_success(&out);
    let sidecar = fs::read_to_string(dir.path().join("capped.cpt.txt")).unwrap();
    assert!(sidecar.contains("spread_used=4,4,2"));
    assert!(sidecar.contains("note=third factor spread capped at 2 (requested 4)"));
}

#[test]
fn generate_rejects_mismatched_leading_dims() {
    let dir = tempfile::tempdir().unwrap();
    let out = krpsgd(
        dir.path(),
        &["generate", "--dims", "6", "7", "2", "--rank", "4", "--out", "x.cpt"],
    );
    assert!(!out.status.success());
}

#[test]
fn decompose_writes_trace_and_model() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "data.cpt");
    let out = krpsgd(
        dir.path(),
        &[
            "decompose", "--in", "data.cpt", "--rank", "4", "--batch", "8", "--sampler",
            "euclidean", "--max-iters", "40", "--cadence", "10", "--seed", "3", "--out-prefix",
            "fit",
        ],
    );
    assert_success(&out);

    let trace = fs::read_to_string(dir.path().join("fit.trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "iter,seconds,rel_error,mode");
    // Starting record plus one evaluation every ten iterations.
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("0,0.000000,"));
    assert!(lines[1].ends_with(",0"));
    for line in &lines[2..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 4);
        assert_eq!(fields[1], "0.000000", "timing stays zero unless requested");
        let rel: f64 = fields[2].parse().unwrap();
        assert!(rel.is_finite() && rel >= 0.0);
        let mode: usize = fields[3].parse().unwrap();
        assert!((1..=3).contains(&mode));
    }

    let model = load_model(dir.path().join("fit.model.cpt")).unwrap();
    assert_eq!(model.rank(), 4);
    assert_eq!(model.dims(), vec![8, 8, 5]);
}

#[test]
fn decompose_is_deterministic_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "data.cpt");
    for prefix in ["one", "two"] {
        let out = krpsgd(
            dir.path(),
            &[
                "decompose", "--in", "data.cpt", "--rank", "4", "--batch", "4", "--sampler",
                "leverage", "--max-iters", "25", "--seed", "11", "--out-prefix", prefix,
            ],
        );
        assert_success(&out);
    }
    assert_eq!(
        fs::read(dir.path().join("one.trace.csv")).unwrap(),
        fs::read(dir.path().join("two.trace.csv")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("one.model.cpt")).unwrap(),
        fs::read(dir.path().join("two.model.cpt")).unwrap()
    );
}

#[test]
fn decompose_reads_the_seed_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "data.cpt");
    let mut flagged = None;
    for (prefix, env, flag) in [
        ("env", Some("11"), None),
        ("flag", None, Some("11")),
        ("other", Some("12"), None),
    ] {
        let mut args = vec![
            "decompose", "--in", "data.cpt", "--rank", "4", "--batch", "4", "--sampler",
            "uniform", "--max-iters", "15", "--out-prefix", prefix,
        ];
        if let Some(seed) = flag {
            args.extend(["--seed", seed]);
        }
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_krpsgd"));
        cmd.args(&args).current_dir(dir.path()).env_remove("KRPSGD_SEED");
        if let Some(seed) = env {
            cmd.env("KRPSGD_SEED", seed);
        }
        let out = cmd.output().unwrap();
        assert_success(&out);
        if prefix == "flag" {
            flagged = Some(fs::read(dir.path().join("flag.trace.csv")).unwrap());
        }
    }
    let env_trace = fs::read(dir.path().join("env.trace.csv")).unwrap();
    let other_trace = fs::read(dir.path().join("other.trace.csv")).unwrap();
    assert_eq!(env_trace, flagged.unwrap(), "KRPSGD_SEED=11 matches --seed 11");
    assert_ne!(env_trace, other_trace, "a different seed changes the run");
}

#[test]
fn decompose_with_infinite_tolerance_stops_after_the_first_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "data.cpt");
    let out = krpsgd(
        dir.path(),
        &[
            "decompose", "--in", "data.cpt", "--rank", "4", "--batch", "4", "--sampler",
            "uniform", "--tol", "inf", "--max-iters", "500", "--seed", "2", "--out-prefix",
            "instant",
        ],
    );
    assert_success(&out);
    let trace = fs::read_to_string(dir.path().join("instant.trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 2, "header plus the starting evaluation:\n{trace}");
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn decompose_rejects_an_unknown_sampler() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "data.cpt");
    let out = krpsgd(
        dir.path(),
        &[
            "decompose", "--in", "data.cpt", "--rank", "4", "--batch", "4", "--sampler",
            "sobol", "--out-prefix", "bad",
        ],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("sampler"), "unexpected error text: {stderr}");
}

fn small_plan(timing: bool) -> String {
    format!(
        r#"
out_dir = "results"
record_timing = {timing}

[[runs]]
sampler = "uniform"
step = "fixed"
seeds = [1, 2]
data = {{ i = 8, j = 5, rank = 4, spread = 2, magnitude = 6.0, noise = 0.05, seed = 7 }}
solver = {{ rank = 4, batch = 4, max_iters = 20, cadence = 5 }}

[[runs]]
sampler = "block-euclidean"
step = "adaptive"
seeds = [1]
data = {{ i = 8, j = 5, rank = 4, spread = 2, magnitude = 6.0, noise = 0.05, seed = 7 }}
solver = {{ rank = 4, batch = 8, max_iters = 20, cadence = 5 }}
"#
    )
}

#[test]
fn bench_writes_results_and_per_run_traces() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("plan.toml"), small_plan(false)).unwrap();
    let out = krpsgd(dir.path(), &["bench", "--plan", "plan.toml", "--jobs", "2"]);
    assert_success(&out);

    let results = fs::read_to_string(dir.path().join("results/results.csv")).unwrap();
    let lines: Vec<&str> = results.lines().collect();
    assert_eq!(
        lines[0],
        "run_id,algorithm,sampler,I,J,R,B,seed,iters_to_tol,seconds,final_rel_error,status"
    );
    assert_eq!(lines.len(), 4, "three runs:\n{results}");
    for (i, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 12);
        assert_eq!(fields[0], (i + 1).to_string(), "rows follow plan order");
        assert_eq!(fields[3], "8");
        assert_eq!(fields[4], "5");
        assert_eq!(fields[5], "4");
        assert!(fields[10].parse::<f64>().unwrap().is_finite());
    }
    assert!(lines[1].contains(",brascpd,uniform,"));
    assert!(lines[2].contains(",brascpd,uniform,"));
    assert!(lines[3].contains(",adawscpd,block-euclidean,"));

    for id in 1..=3 {
        let trace = dir.path().join(format!("results/run_{id:03}.trace.csv"));
        assert!(trace.exists(), "missing {}", trace.display());
    }
}

#[test]
fn bench_output_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("plan.toml"), small_plan(false)).unwrap();

    let out = krpsgd(dir.path(), &["bench", "--plan", "plan.toml", "--jobs", "3"]);
    assert_success(&out);
    let first = fs::read(dir.path().join("results/results.csv")).unwrap();
    let first_trace = fs::read(dir.path().join("results/run_002.trace.csv")).unwrap();

    let out = krpsgd(dir.path(), &["bench", "--plan", "plan.toml", "--jobs", "1"]);
    assert_success(&out);
    assert_eq!(fs::read(dir.path().join("results/results.csv")).unwrap(), first);
    assert_eq!(
        fs::read(dir.path().join("results/run_002.trace.csv")).unwrap(),
        first_trace
    );
}

#[test]
fn bench_records_timing_only_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let plan = small_plan(true).replace("max_iters = 20", "max_iters = 2000");
    fs::write(dir.path().join("plan.toml"), plan).unwrap();
    let out = krpsgd(dir.path(), &["bench", "--plan", "plan.toml"]);
    assert_success(&out);
    let results = fs::read_to_string(dir.path().join("results/results.csv")).unwrap();
    let line = results.lines().nth(1).unwrap();
    let seconds: f64 = line.split(',').nth(9).unwrap().parse().unwrap();
    assert!(seconds > 0.0, "timed run reports wall-clock seconds: {line}");
}

#[test]
fn bench_rejects_a_plan_with_duplicate_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let plan = small_plan(false).replace("seeds = [1, 2]", "seeds = [1, 1]");
    fs::write(dir.path().join("plan.toml"), plan).unwrap();
    let out = krpsgd(dir.path(), &["bench", "--plan", "plan.toml"]);
    assert!(!out.status.success());
}

#[test]
fn verify_runs_a_filtered_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = krpsgd(
        dir.path(),
        &["verify", "--only", "krp-identity", "--csv", "report.csv"],
    );
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("check krp-identity: PASS"), "stdout: {stdout}");

    let report = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(report.starts_with("check,measured,threshold,pass"));
    assert!(report.contains("krp-identity"));
}

#[test]
fn verify_rejects_an_unmatched_filter_and_half_a_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = krpsgd(dir.path(), &["verify", "--only", "no-such-check"]);
    assert!(!out.status.success());

    let out = krpsgd(dir.path(), &["verify", "--tensor", "x.cpt"]);
    assert!(!out.status.success());
}

#[test]
fn verify_dumps_per_row_probabilities_for_a_fixture_model() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "data.cpt");
    let out = krpsgd(
        dir.path(),
        &[
            "decompose", "--in", "data.cpt", "--rank", "4", "--batch", "4", "--sampler",
            "uniform", "--max-iters", "5", "--seed", "1", "--out-prefix", "fit",
        ],
    );
    assert_success(&out);
    let out = krpsgd(
        dir.path(),
        &[
            "verify", "--only", "krp-identity", "--tensor", "data.cpt", "--model",
            "fit.model.cpt", "--dump-probs", "probs.csv",
        ],
    );
    assert_success(&out);

    let probs = fs::read_to_string(dir.path().join("probs.csv")).unwrap();
    let lines: Vec<&str> = probs.lines().collect();
    assert_eq!(lines[0], "mode,row,leverage,euclidean");
    // One row per factor row: 8 + 8 + 5.
    assert_eq!(lines.len(), 22);
    for mode in 1..=3 {
        let total: f64 = lines[1..]
            .iter()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f[0] == mode.to_string() {
                    f[3].parse::<f64>().unwrap()
                } else {
                    0.0
                }
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-9, "mode {mode} sums to {total}");
    }
}
