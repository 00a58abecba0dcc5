use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;
use tempfile::TempDir;

fn evengw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evengw"))
        .args(args)
        .env_remove("EVENGW_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

/// mu = (delta_0 + delta_1)/2 and nu = (delta_0 + delta_2)/2 on the line.
fn line_pair(dir: &TempDir) -> (String, String) {
    (
        write(dir, "mu.csv", "x\n0\n1\n"),
        write(
            dir,
            "nu.json",
            r#"{"dim": 1, "atoms": [[0.0], [2.0]], "weights": [0.5, 0.5]}"#,
        ),
    )
}

#[test]
fn compute_writes_versioned_json() {
    let dir = TempDir::new().unwrap();
    let (mu, nu) = line_pair(&dir);
    let out = dir.path().join("res.json");
    let o = evengw(&["compute", "--mu", &mu, "--nu", &nu, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc = read_json(&out);
    assert_eq!(doc["schema_version"], "evengw/1");
    assert_eq!(doc["kind"], "compute");
    assert_eq!(doc["config"]["r"], 1);
    assert_eq!(doc["config"]["solver"]["restarts"], 10);
    let v = doc["result"]["value"].as_f64().unwrap();
    assert!((v - 4.5).abs() < 1e-12, "{v}");
    let s = stdout(&o);
    assert!(s.contains("value") && s.contains("method"), "{s}");
}

#[test]
fn compute_without_out_prints_json() {
    let dir = TempDir::new().unwrap();
    let (mu, nu) = line_pair(&dir);
    let o = evengw(&["-q", "compute", "--mu", &mu, "--nu", &nu]);
    assert_eq!(o.status.code(), Some(0));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["schema_version"], "evengw/1");
    assert!(o.stderr.is_empty());
}

#[test]
fn missing_file_exits_1_naming_path() {
    let dir = TempDir::new().unwrap();
    let (_, nu) = line_pair(&dir);
    let missing = dir.path().join("absent.csv");
    let o = evengw(&["compute", "--mu", missing.to_str().unwrap(), "--nu", &nu]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("absent.csv"), "{}", stderr(&o));
}

#[test]
fn malformed_measure_exits_1_naming_path() {
    let dir = TempDir::new().unwrap();
    let (mu, _) = line_pair(&dir);
    let bad = write(&dir, "bad.json", r#"{"dim": 1, "atoms": [[0.0]], "weights": [-1.0]}"#);
    let o = evengw(&["compute", "--mu", &mu, "--nu", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.json"), "{}", stderr(&o));
}

#[test]
fn bad_parameters_exit_1_naming_parameter() {
    let dir = TempDir::new().unwrap();
    let (mu, nu) = line_pair(&dir);
    let o = evengw(&["compute", "--mu", &mu, "--nu", &nu, "--r", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`r`"), "{}", stderr(&o));

    let o = evengw(&["compute", "--mu", &mu, "--nu", &nu, "--restarts", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("restarts"), "{}", stderr(&o));

    let o = evengw(&["rate", "--dist-x", "sphere:2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dist-x"), "{}", stderr(&o));

    let o = evengw(&["compute", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn term_cap_exits_2() {
    let o = evengw(&["decompose", "--r", "3", "--k", "3", "--d-x", "5", "--d-y", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cap"), "{}", stderr(&o));
}

#[test]
fn configured_caps_exit_2() {
    let dir = TempDir::new().unwrap();
    let (mu, nu) = line_pair(&dir);
    let cfg = write(&dir, "caps.toml", "[limits]\nterm_cap = 10\n");
    let o = evengw(&["--config", &cfg, "compute", "--mu", &mu, "--nu", &nu]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cap of 10"), "{}", stderr(&o));

    let cfg = write(&dir, "basis.toml", "[limits]\nbasis_cap = 3\n");
    let o = evengw(&["--config", &cfg, "decompose", "--d-x", "1", "--d-y", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("basis cap"), "{}", stderr(&o));
}

#[test]
fn decompose_reports_signed_split() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.json");
    let o = evengw(&["decompose", "--d-x", "1", "--d-y", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc = read_json(&out);
    assert_eq!(doc["schema_version"], "evengw/1");
    let s = &doc["summary"];
    // Regression constants for (r, k, d_x, d_y) = (1, 1, 1, 1).
    assert_eq!(s["term_count"], 19);
    assert_eq!(s["marginal_term_count"], 12);
    assert_eq!(s["basis_size"], 7);
    assert_eq!(s["J"], 7);
    assert_eq!(s["ell"], 3);
    assert_eq!(s["negative_count"], 4);
    assert!(s["ell"].as_u64().unwrap() >= 1 && s["J"].as_u64().unwrap() >= 2);
    assert_eq!(doc["family"]["polys"].as_array().unwrap().len(), 7);
    assert!(doc["family"]["boxes"].is_null());
    assert!(doc["boxes_note"].as_str().unwrap().contains("boxes omitted"));
    let text = stdout(&o);
    assert!(text.contains("J 7") && text.contains("ell 3"), "{text}");
}

#[test]
fn decompose_with_supports_has_boxes() {
    let dir = TempDir::new().unwrap();
    let (mu, nu) = line_pair(&dir);
    let out = dir.path().join("d.json");
    let o = evengw(&[
        "decompose", "--d-x", "1", "--d-y", "1", "--supp-x", &mu, "--supp-y", &nu, "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc = read_json(&out);
    let plus = doc["family"]["boxes"]["plus"].as_array().unwrap();
    let minus = doc["family"]["boxes"]["minus"].as_array().unwrap();
    assert_eq!(plus.len(), 3);
    assert_eq!(minus.len(), 4);
    assert!(doc["boxes_note"].is_null());
}

#[test]
fn decompose_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let o = evengw(&[
            "decompose", "--r", "1", "--k", "2", "--d-x", "2", "--d-y", "1", "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn precedence_flags_over_config_over_defaults() {
    let dir = TempDir::new().unwrap();
    let (mu, nu) = line_pair(&dir);
    let cfg = write(&dir, "c.toml", "k = 2\nseed = 5\n[solver]\nrestarts = 3\nmax_iters = 50\n");
    let out = dir.path().join("r.json");
    let out_s = out.to_str().unwrap();
    let o = evengw(&[
        "--config", &cfg, "compute", "--mu", &mu, "--nu", &nu, "--seed", "9", "--out", out_s,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let c = &read_json(&out)["config"];
    assert_eq!(c["seed"], 9);
    assert_eq!(c["solver"]["seed"], 9);
    assert_eq!(c["k"], 2);
    assert_eq!(c["r"], 1);
    assert_eq!(c["solver"]["restarts"], 3);
    assert_eq!(c["solver"]["max_iters"], 50);
    assert_eq!(c["solver"]["fw_tol"], 1e-9);
    assert!(c["config_file"].as_str().unwrap().ends_with("c.toml"));

    let o = evengw(&["--config", &cfg, "compute", "--mu", &mu, "--nu", &nu, "--out", out_s]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read_json(&out)["config"]["seed"], 5);
}

#[test]
fn env_seed_is_a_default() {
    let dir = TempDir::new().unwrap();
    let (mu, nu) = line_pair(&dir);
    let out = dir.path().join("r.json");
    let run = |extra: &[&str]| {
        let mut args = vec!["compute", "--mu", &mu, "--nu", &nu, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = Command::new(env!("CARGO_BIN_EXE_evengw"))
            .args(&args)
            .env("EVENGW_SEED", "17")
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        read_json(&out)["config"]["seed"].clone()
    };
    assert_eq!(run(&[]), 17);
    assert_eq!(run(&["--seed", "3"]), 3);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let mu = write(&dir, "mu.csv", "0,0\n1,0.5\n0.3,1\n-0.4,0.2\n");
    let nu = write(&dir, "nu.csv", "0\n1.5\n0.7\n");
    let mut results = Vec::new();
    for t in ["1", "4"] {
        let out = dir.path().join(format!("t{t}.json"));
        let o = evengw(&[
            "--threads", t, "compute", "--mu", &mu, "--nu", &nu, "--k", "2", "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        results.push(read_json(&out)["result"].clone());
    }
    assert_eq!(results[0], results[1]);
}

#[test]
fn rate_writes_csv_and_summary() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("rate.csv");
    let o = evengw(&[
        "rate", "--kind", "lower-bound", "--dist-x", "two-point:1:1:0.25", "--n-grid",
        "32,64,128", "--trials", "20", "--seed", "4", "--out", csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("n,trial,error\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 20);
    let doc = read_json(&csv.with_extension("json"));
    assert_eq!(doc["schema_version"], "evengw/1");
    assert_eq!(doc["experiment"]["reference"], "closed_form");
    assert_eq!(doc["config"]["seed"], 4);
    assert_eq!(doc["result"]["reference_value"], 0.375);
    assert_eq!(doc["result"]["per_n_errors"].as_array().unwrap().len(), 3);
}

#[test]
fn rate_is_deterministic() {
    let run = || {
        let o = evengw(&[
            "-q", "rate", "--dist-x", "cube:1:1", "--n-grid", "8,16", "--trials", "3",
            "--restarts", "2", "--seed", "11",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        o.stdout
    };
    assert_eq!(run(), run());
}

#[test]
fn rate_rejects_reference_for_exact_kinds() {
    let o = evengw(&[
        "rate", "--kind", "marginal", "--dist-x", "cube:1:1", "--reference", "self-zero",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("reference"));
}

#[test]
fn selftest_passes_within_budget() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("st.json");
    let t = Instant::now();
    let o = evengw(&["selftest", "--out", out.to_str().unwrap()]);
    assert!(t.elapsed() < Duration::from_secs(60));
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    for name in [
        "closed-form two-point values",
        "expansion identity",
        "translation invariance",
        "dilation homogeneity",
        "2x2 oracle agreement",
    ] {
        assert!(text.contains(&format!("PASS {name}")), "{text}");
    }
    let doc = read_json(&out);
    assert_eq!(doc["schema_version"], "evengw/1");
    assert!(doc["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn selftest_detects_corrupted_expansion() {
    let o = evengw(&["selftest", "--inject-fault", "expansion"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL expansion identity"), "{}", stdout(&o));
    assert!(stderr(&o).contains("expansion identity"));
}

#[test]
fn selftest_detects_broken_oracle() {
    let o = evengw(&["selftest", "--inject-fault", "oracle"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL 2x2 oracle agreement"), "{}", stdout(&o));
}
