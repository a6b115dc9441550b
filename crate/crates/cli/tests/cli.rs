use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sparsespan"));
    c.env("RUST_LOG", "error");
    c
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// A1 beats A2 by 0.02 in every period.
fn dominant_panel(dir: &Path) -> std::path::PathBuf {
    let rows = [0.01, -0.03, 0.04, 0.0, 0.02, -0.01, 0.05, -0.02, 0.03, 0.01, -0.04, 0.02];
    let mut text = String::from("date,A1,A2\n");
    for (i, r) in rows.iter().enumerate() {
        text.push_str(&format!("2010-{:02}-01,{},{}\n", i + 1, r + 0.02, r));
    }
    write(dir, "r.csv", &text)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn span_selects_the_dominant_asset() {
    let dir = tempfile::tempdir().unwrap();
    let input = dominant_panel(dir.path());
    let out = dir.path().join("out");
    let status = bin()
        .args(["span", "--input"])
        .arg(&input)
        .args(["--q-max", "5", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let doc = json(&out.join("span.json"));
    assert_eq!(doc["support"], serde_json::json!(["A1"]));
    assert_eq!(doc["loss"].as_f64().unwrap(), 0.0);
    assert_eq!(doc["schema_version"], 1);
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["subcommand"], "span");
    assert_eq!(manifest["config"]["spanning"]["q_max"], 5);
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 1);
}

#[test]
fn span_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let input = dominant_panel(dir.path());
    let out = bin().args(["span", "--out", "-", "--input"]).arg(&input).output().unwrap();
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["support"], serde_json::json!(["A1"]));
}

#[test]
fn missing_input_exits_2_with_path() {
    let out = bin()
        .args(["span", "--input", "/nonexistent/returns.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/returns.csv"));
}

#[test]
fn unknown_flag_exits_2() {
    let out = bin().args(["span", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_defaults() {
    let out = bin().args(["ci", "--help"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--alpha", "--subsample-length", "--q-max", "--seed", "--threads", "--config", "--out"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    assert!(text.contains("[default: 0.05]"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let input = dominant_panel(dir.path());
    let cfg = write(dir.path(), "c.toml", &format!("input = {:?}\nq_max = 2\nn1 = 6\n", input.display().to_string()));
    let out = dir.path().join("o");
    let status = bin()
        .args(["span", "--n1", "4", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"]["spanning"]["q_max"], 2);
    assert_eq!(m["config"]["spanning"]["n1"], 4);
}

#[test]
fn mc_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = bin()
            .args(["mc", "--experiment", "2", "--q", "10", "--t", "300", "--reps", "5", "--seed", "1", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        ["mc.json", "mc_summary.csv", "mc_records.csv"].map(|f| std::fs::read(out.join(f)).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn test_dominance_rejects_for_shifted_copy() {
    let dir = tempfile::tempdir().unwrap();
    let input = dominant_panel(dir.path());
    let out = bin()
        .args(["test-dominance", "--benchmark", "A2", "--candidate", "A1", "--replications", "200", "--seed", "3", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(doc["statistic"].as_f64().unwrap() > 0.0);
    assert_eq!(doc["bootstrap"].as_array().unwrap().len(), 200);
}

#[test]
fn backtest_writes_its_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = dominant_panel(dir.path());
    let out = dir.path().join("bt");
    let status = bin()
        .args(["backtest", "--window", "8", "--q-max", "2", "--n1", "5", "--n2", "2", "--input"])
        .arg(&input)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["records.csv", "wealth.csv", "report.json", "backtest.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let records = std::fs::read_to_string(out.join("records.csv")).unwrap();
    assert!(records.lines().filter(|l| l.contains("sparse-ssd")).all(|l| l.contains("0:1")));
}

#[test]
fn metrics_and_regress_run() {
    let dir = tempfile::tempdir().unwrap();
    let input = dominant_panel(dir.path());
    let mut f = String::from("date,MKT,RF\n");
    let mkt = [0.02, -0.01, 0.03, 0.0, 0.01, -0.02, 0.04, -0.03, 0.02, 0.0, -0.05, 0.01];
    for (i, m) in mkt.iter().enumerate() {
        f.push_str(&format!("2010-{:02}-01,{m},0.001\n", i + 1));
    }
    let factors = write(dir.path(), "f.csv", &f);
    let out = dir.path().join("m");
    assert!(bin()
        .args(["metrics", "--benchmark", "A2", "--input"])
        .arg(&input)
        .arg("--rf")
        .arg(&factors)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    assert!(out.join("metrics.csv").exists());
    let out = dir.path().join("g");
    assert!(bin()
        .args(["regress", "--model", "MKT", "--se", "plain", "--returns"])
        .arg(&input)
        .arg("--factors")
        .arg(&factors)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let doc = json(&out.join("regress.json"));
    assert_eq!(doc["results"].as_array().unwrap().len(), 2);
}

#[test]
fn validation_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = dominant_panel(dir.path());
    let out = bin().args(["span", "--q-max", "0", "--input"]).arg(&input).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
