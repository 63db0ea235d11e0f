use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use semperf::harness::{read_summary_csv, RunRecord};
use semperf_cli::{run, EXIT_DEGENERATE, EXIT_INPUT, EXIT_OK, EXIT_RUN};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn semperf(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("semperf").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn example_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn bench_is_byte_identical_for_equal_seeds() {
    let cfg = example_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let o = semperf(&["bench", "-c", s(&cfg), "strong", "--mode", "sim", "--seed", "7", "--out", s(dir)]);
        assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    }
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 4);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn bench_outputs_agree_with_each_other() {
    let cfg = example_config();
    let dir = tempfile::tempdir().unwrap();
    let o = semperf(&["bench", "-c", s(&cfg), "strong", "--out", s(dir.path())]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let records: Vec<RunRecord> = serde_json::from_str(&fs::read_to_string(dir.path().join("strong.json")).unwrap()).unwrap();
    let rows = read_summary_csv(&fs::read_to_string(dir.path().join("strong.csv")).unwrap()).unwrap();
    let summaries: Vec<_> = rows.iter().filter(|r| r.row == "summary").collect();
    assert_eq!(summaries.len(), records.len());
    let table: Vec<&str> = o.stdout.lines().skip(1).collect();
    for ((rec, row), line) in records.iter().zip(&summaries).zip(&table) {
        assert_eq!(row.efficiency, rec.summary.efficiency);
        assert_eq!(row.ranks, rec.ranks);
        let cols: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cols[0].parse::<usize>().unwrap(), rec.ranks);
        let e: f64 = cols[6].parse().unwrap();
        assert!((e - rec.summary.efficiency).abs() < 5e-4);
    }
    let dat = fs::read_to_string(dir.path().join("strong.efficiency.dat")).unwrap();
    assert_eq!(dat.lines().filter(|l| !l.starts_with('#')).count(), records.len());
}

#[test]
fn bench_reports_over_decomposition() {
    let dir = tempfile::tempdir().unwrap();
    let o = semperf(&["bench", "-c", s(&example_config()), "overdecomposed", "--out", s(dir.path())]);
    assert_eq!(o.code, EXIT_RUN);
    assert!(o.stderr.contains("P=1000"), "{}", o.stderr);
}

#[test]
fn bench_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = semperf(&["bench", "-c", s(&example_config()), "nope", "--out", s(dir.path())]);
    assert_eq!(o.code, EXIT_INPUT);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "version = 9\n").unwrap();
    assert_eq!(semperf(&["bench", "-c", s(&bad), "x"]).code, EXIT_INPUT);
    // output directory that is a regular file
    let file = dir.path().join("plain");
    fs::write(&file, "").unwrap();
    let o = semperf(&["bench", "-c", s(&example_config()), "strong", "--out", s(&file)]);
    assert_eq!(o.code, EXIT_INPUT);
    assert_eq!(semperf(&["bench", "-c", "/nonexistent/cfg.toml", "x"]).code, EXIT_INPUT);
    assert_eq!(semperf(&["frobnicate"]).code, EXIT_INPUT);
}

#[test]
fn bench_executes_small_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let o = semperf(&["bench", "-c", s(&example_config()), "smoke", "--mode", "exec", "--out", s(dir.path())]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let records: Vec<RunRecord> = serde_json::from_str(&fs::read_to_string(dir.path().join("smoke.json")).unwrap()).unwrap();
    assert_eq!(records.len(), 4);
    for r in &records {
        assert!(r.steps.iter().all(|s| s.iterations == 10));
    }
}

#[test]
fn config_path_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_semperf"))
        .args(["bench", "degree", "--out", s(dir.path())])
        .env("SEMPERF_CONFIG", example_config())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("degree.csv").exists());
    let o = Command::new(env!("CARGO_BIN_EXE_semperf"))
        .args(["bench", "degree"])
        .env_remove("SEMPERF_CONFIG")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(EXIT_INPUT));
}

fn predict(machine: &str, ranks: &str) -> serde_json::Value {
    let o = semperf(&[
        "predict", "--machine", machine, "--elements", "8", "--degree", "8", "--ranks", ranks, "--iterations", "3278",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    json(&o.stdout)
}

#[test]
fn predict_is_internally_consistent() {
    for machine in ["pleiades", "pleiades2", "pleiades2plus", "gele", "pleiades2-fixed-size"] {
        for p in ["2", "8", "64"] {
            let v = predict(machine, p);
            let (tp, tc, tl) = (v["T_P"].as_f64().unwrap(), v["T_C"].as_f64().unwrap(), v["T_L"].as_f64().unwrap());
            let g = v["gamma"].as_f64().unwrap();
            assert!((g - tp / (tc + tl)).abs() <= 1e-12 * g);
            assert!((v["T"].as_f64().unwrap() - (tp + tc + tl)).abs() <= 1e-12 * tp);
            let e = v["E"].as_f64().unwrap();
            assert!((e - g / (1.0 + g)).abs() < 1e-12);
            assert!((v["S"].as_f64().unwrap() - e * p.parse::<f64>().unwrap()).abs() < 1e-9);
        }
    }
}

#[test]
fn predict_single_rank_is_ideal() {
    let v = predict("pleiades2", "1");
    assert_eq!(v["S"].as_f64(), Some(1.0));
    assert_eq!(v["E"].as_f64(), Some(1.0));
    assert_eq!(v["gamma"], "saturated");
}

#[test]
fn predict_orders_networks_like_measurements() {
    let g = |m: &str| predict(m, "8")["gamma"].as_f64().unwrap();
    let (slow, fast, shared) = (g("pleiades"), g("pleiades2"), g("pleiades2plus"));
    assert!(fast > shared && shared > slow, "{slow} {fast} {shared}");
    assert!(fast / slow > 2.0);
}

#[test]
fn predict_errors() {
    let o = semperf(&["predict", "--machine", "cray-2", "--elements", "8", "--degree", "8", "--ranks", "2"]);
    assert_eq!(o.code, EXIT_INPUT);
    assert!(o.stderr.contains("cray-2"));
    let o = semperf(&["predict", "--machine", "gele", "--elements", "2", "--degree", "8", "--ranks", "64"]);
    assert_eq!(o.code, EXIT_INPUT);
    let o = semperf(&["predict", "--machine", "gele", "--elements", "2", "--degree", "8", "--ranks", "2", "--format", "table"]);
    assert_eq!(o.code, EXIT_OK);
    assert!(o.stdout.contains("Gamma"));
}

#[test]
fn predict_uses_config_machines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.toml");
    fs::write(&cfg, "version = 1\n[machines.toy]\ncore_rate_mflops = 100.0\nlink_bandwidth_mbs = 1.0\n").unwrap();
    let o = semperf(&["predict", "-c", s(&cfg), "--machine", "toy", "--elements", "2", "--degree", "3", "--ranks", "2"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert_eq!(json(&o.stdout)["T_L"].as_f64(), Some(0.0));
}

const PUBLISHED: &str = "name,T_P,gamma,bandwidth_model,sharing\n\
pleiades,13.58,1.44,base,1\n\
pleiades2,7.56,3.81,scaled,1\n\
pleiades2plus,7.93,1.60,scaled_shared,4\n";

#[test]
fn calibrate_published_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("measured.csv");
    fs::write(&table, PUBLISHED).unwrap();
    let o = semperf(&["calibrate", s(&table)]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let v = json(&o.stdout);
    assert!((v["T_L"].as_f64().unwrap() - 1.0).abs() <= 0.05);
    assert!((v["alpha"].as_f64().unwrap() - 8.4).abs() <= 0.2);
    let artifact = fs::read_to_string(dir.path().join("measured.fit.json")).unwrap();
    assert_eq!(artifact, o.stdout);
}

#[test]
fn calibrate_recovers_synthetic_constants() {
    let (w, alpha, tl, b1) = (60.0, 5.0, 0.25, 20.0);
    let mut text = String::from("name,T_P,gamma,bandwidth_model,sharing\n");
    for (name, model, s, tp) in [("a", "base", 1.0, 10.0), ("b", "scaled", 1.0, 6.0), ("c", "scaled_shared", 2.0, 6.5)] {
        let b = if model == "base" { b1 } else { alpha * b1 };
        let gamma = tp / (w * s / b + tl);
        text.push_str(&format!("{name},{tp},{gamma:.17e},{model},{s}\n"));
    }
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("synthetic.csv");
    fs::write(&table, text).unwrap();
    let out = dir.path().join("fit.json");
    let o = semperf(&["calibrate", s(&table), "--base-bandwidth", "20", "--out", s(&out)]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let v = json(&fs::read_to_string(out).unwrap());
    assert!((v["volume_mb"].as_f64().unwrap() - w).abs() < 1e-9);
    assert!((v["alpha"].as_f64().unwrap() - alpha).abs() < 1e-9);
    assert!((v["T_L"].as_f64().unwrap() - tl).abs() < 1e-9);
}

#[test]
fn calibrate_degenerate_tables() {
    let dir = tempfile::tempdir().unwrap();
    let two = dir.path().join("two.csv");
    fs::write(&two, PUBLISHED.lines().take(3).collect::<Vec<_>>().join("\n")).unwrap();
    let o = semperf(&["calibrate", s(&two)]);
    assert_eq!(o.code, EXIT_DEGENERATE);
    // both scaled rows without link sharing: the printed system
    let printed = dir.path().join("printed.csv");
    fs::write(&printed, PUBLISHED.replace("scaled_shared,4", "scaled,1")).unwrap();
    let o = semperf(&["calibrate", s(&printed)]);
    assert_eq!(o.code, EXIT_DEGENERATE);
    assert!(o.stderr.contains("pleiades2plus"), "{}", o.stderr);
    let garbage = dir.path().join("garbage.csv");
    fs::write(&garbage, "name,T_P\nx,notanumber\n").unwrap();
    assert_eq!(semperf(&["calibrate", s(&garbage)]).code, EXIT_INPUT);
    assert_eq!(semperf(&["calibrate", "/nonexistent.csv"]).code, EXIT_INPUT);
}

fn write_samples(dir: &Path, name: &str, values: &[f64]) -> PathBuf {
    let mut text = String::from("timestamp,usage\n");
    for (i, v) in values.iter().enumerate() {
        text.push_str(&format!("{},{v}\n", 20 * i));
    }
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn analyze_constant_series() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_samples(dir.path(), "flat.csv", &[0.79; 50]);
    let o = semperf(&["analyze", s(&p)]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let v = json(&o.stdout);
    assert!((v["mean_efficiency"].as_f64().unwrap() - 0.79).abs() < 1e-12);
    assert!((v["gamma"].as_f64().unwrap() - 3.76).abs() < 0.01);
    let hist = fs::read_to_string(dir.path().join("flat.hist.dat")).unwrap();
    let rows: Vec<(f64, u64)> = hist
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let mut it = l.split_whitespace();
            (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap())
        })
        .collect();
    assert!(rows.len() <= 101);
    assert_eq!(rows.iter().map(|r| r.1).sum::<u64>(), 50);
    assert_eq!(rows.iter().find(|r| r.1 > 0).unwrap().0, 0.79);
}

#[test]
fn analyze_spread_series() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<f64> = (0..400).map(|i| 0.616 + 0.05 * (if i % 2 == 0 { 1.0 } else { -1.0 }) * ((i % 7) as f64 / 6.0)).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let p = write_samples(dir.path(), "spread.csv", &values);
    let out = dir.path().join("h.dat");
    let o = semperf(&["analyze", s(&p), "--bin-width", "0.01", "--out", s(&out)]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let v = json(&o.stdout);
    assert!((v["mean_efficiency"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!((mean - 0.616).abs() < 0.002);
    assert!((v["gamma"].as_f64().unwrap() - 1.60).abs() < 0.01);
    assert!(v["bins"].as_u64().unwrap() <= 101);
    assert!(out.exists());
}

#[test]
fn analyze_normalizes_node_usage() {
    let dir = tempfile::tempdir().unwrap();
    // two busy ranks on a four-core node read as half the node
    let p = write_samples(dir.path(), "node.csv", &[0.4, 0.4, 0.6]);
    let o = semperf(&["analyze", s(&p), "--cores-per-node", "4", "--active-ranks", "2"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let v = json(&o.stdout);
    assert!((v["mean_efficiency"].as_f64().unwrap() - (0.8 + 0.8 + 1.0) / 3.0).abs() < 1e-12);
    assert_eq!(v["saturated_samples"].as_u64(), Some(1));
}

#[test]
fn analyze_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "timestamp,usage\n").unwrap();
    assert_eq!(semperf(&["analyze", s(&empty)]).code, EXIT_INPUT);
    let bad = write_samples(dir.path(), "bad.csv", &[0.5, 1.5]);
    assert_eq!(semperf(&["analyze", s(&bad)]).code, EXIT_INPUT);
    let ok = write_samples(dir.path(), "ok.csv", &[0.5]);
    assert_eq!(semperf(&["analyze", s(&ok), "--bin-width", "0"]).code, EXIT_INPUT);
    assert_eq!(semperf(&["analyze", s(&ok), "--cores-per-node", "4"]).code, EXIT_INPUT);
}
