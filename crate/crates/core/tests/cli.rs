use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use countmix::io::BUTTERFLY;
use serde_json::Value;

fn countmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_countmix"))
        .args(args)
        .env("COUNTMIX_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn butterfly_gof_accepts_mixture_and_rejects_p_model() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "butterfly.fp", BUTTERFLY);
    let mix = json(&countmix(&[
        "gof", "--input", &input, "--T", "10", "--model", "mixture",
    ]));
    assert_eq!(mix["v"], 1);
    assert_eq!(mix["kind"], "gof");
    assert!(mix["p_value"].as_f64().unwrap() > 0.05);
    assert_eq!(mix["observed"][0], 304);
    let pm = json(&countmix(&[
        "gof", "--input", &input, "--T", "10", "--model", "p-model",
    ]));
    assert!(pm["p_value"].as_f64().unwrap() < 1e-3);
    assert!(pm["fit"].is_null());
}

#[test]
fn empirical_entropy_of_all_zeros_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "zeros.txt", "0\n0\n0\n0\n");
    let out = json(&countmix(&[
        "estimate",
        "--input",
        &input,
        "--functional",
        "entropy",
        "--method",
        "empirical",
    ]));
    assert_eq!(out["value"].as_f64(), Some(0.0));
    assert_eq!(out["method"], "empirical");
}

#[test]
fn fit_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "c.txt", "0\n1\n1\n4\n9\n2\n0\n17\n3\n");
    let args = ["fit", "--input", &input, "--grid-size", "300", "--tol", "1e-8"];
    let a = countmix(&args);
    let b = countmix(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let doc: Value = serde_json::from_slice(&a.stdout).unwrap();
    for field in [
        "v",
        "atoms",
        "weights",
        "log_likelihood",
        "optimality_gap",
        "iterations",
        "converged",
    ] {
        assert!(doc.get(field).is_some(), "missing {field}");
    }
    assert!(doc["optimality_gap"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn output_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "c.txt", "3\n5\n");
    let target = dir.path().join("fit.csv");
    let out = countmix(&[
        "fit",
        "--input",
        &input,
        "--format",
        "csv",
        "--output",
        target.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert!(fs::read_to_string(target).unwrap().starts_with("atom,weight\n"));
}

#[test]
fn exit_codes() {
    let bad_flag = countmix(&["fit", "--no-such-flag"]);
    assert_eq!(bad_flag.status.code(), Some(2));
    let bad_value = countmix(&["estimate", "--functional", "power-sum:7"]);
    assert_eq!(bad_value.status.code(), Some(2));
    let missing = countmix(&["gof"]);
    assert_eq!(missing.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "bad.txt", "1\n-2\n");
    let failed = countmix(&["fit", "--input", &input]);
    assert_eq!(failed.status.code(), Some(1));
    let err = String::from_utf8(failed.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("line 2"), "{err}");

    let absent = countmix(&["fit", "--input", dir.path().join("nope").to_str().unwrap()]);
    assert_eq!(absent.status.code(), Some(1));

    let help = countmix(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn help_lists_every_flag() {
    let out = countmix(&["estimate", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--input",
        "--n",
        "--k",
        "--grid-size",
        "--kernel",
        "--tol",
        "--seed",
        "--output",
        "--format",
        "--functional",
        "--method",
    ] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    let gof = String::from_utf8(countmix(&["gof", "--help"]).stdout).unwrap();
    assert!(gof.contains("--T") && gof.contains("--model"));
    let pen = String::from_utf8(countmix(&["penalized", "--help"]).stdout).unwrap();
    assert!(pen.contains("--c0") && pen.contains("--c1"));
    let uns = String::from_utf8(countmix(&["unseen", "--help"]).stdout).unwrap();
    assert!(uns.contains("--t-grid"));
    let sim = String::from_utf8(countmix(&["simulate", "--help"]).stdout).unwrap();
    assert!(sim.contains("--config"));
}

#[test]
fn unseen_and_penalized_csv() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "c.txt", "1\n1\n1\n2\n2\n3\n5\n8\n1\n1\n");
    let out = countmix(&["unseen", "--input", &input, "--t-grid", "0.5,1,2", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,plugin,good_turing");
    assert_eq!(lines.len(), 4);
    let bad = countmix(&["unseen", "--input", &input, "--t-grid", "1,x"]);
    assert_eq!(bad.status.code(), Some(1));

    let pen = countmix(&["penalized", "--input", &input, "--format", "csv"]);
    assert!(pen.status.success());
    assert!(String::from_utf8(pen.stdout)
        .unwrap()
        .starts_with("k_prime,likelihood,objective\n"));
    let pen_json = json(&countmix(&["penalized", "--input", &input, "--c0", "5", "--c1", "1"]));
    assert!(pen_json["k_hat"].as_f64().unwrap() >= 10.0);
}

#[test]
fn estimate_methods_and_localized() {
    let dir = tempfile::tempdir().unwrap();
    let counts: String = (0..200).map(|i| format!("{}\n", (i * 7) % 13)).collect();
    let input = write(dir.path(), "c.txt", &counts);
    for (method, functional) in [
        ("plugin", "entropy"),
        ("localized", "entropy"),
        ("miller-madow", "entropy"),
        ("plugin", "power-sum:0.5"),
        ("plugin", "renyi:0.5"),
        ("plugin", "support:0.001"),
        ("good-turing", "unseen:1"),
    ] {
        let out = json(&countmix(&[
            "estimate",
            "--input",
            &input,
            "--functional",
            functional,
            "--method",
            method,
        ]));
        assert!(out["value"].as_f64().unwrap().is_finite(), "{method} {functional}");
    }
    let gt_entropy = countmix(&["estimate", "--input", &input, "--method", "good-turing"]);
    assert_eq!(gt_entropy.status.code(), Some(1));
    let loc = json(&countmix(&[
        "localized",
        "--input",
        &input,
        "--kernel",
        "binomial",
        "--n",
        "1000",
    ]));
    assert_eq!(loc["kind"], "localized");
    assert_eq!(loc["small"].as_u64().unwrap() + loc["large"].as_u64().unwrap(), 200);
}

#[test]
fn simulate_honours_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "exp.json",
        r#"{"distribution":{"kind":"uniform","k":30},"n_list":[60],"trials":4,
            "estimators":["empirical","miller-madow"],"seed":1}"#,
    );
    let run = |seed: &str| countmix(&["simulate", "--config", &config, "--seed", seed, "--format", "csv"]);
    let a = run("9");
    let b = run("9");
    let c = run("10");
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("estimator,n,k,trial_count,rmse,mean,std,truth\n"));
    assert_eq!(text.lines().count(), 3);
}
