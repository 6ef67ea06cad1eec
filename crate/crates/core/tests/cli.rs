mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::fixtures_dir;
use ita_core::tensor_io::{read_tensor, TensorData};

fn ita(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ita-sim")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn perf_report_defaults() {
    let v = json(&ita(&["perf-report", "--dims", "64x64x64x1"]));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["bandwidth_ws_bits"], 1664);
    assert_eq!(v["bandwidth_os_bits"], 9344);
    assert_eq!(v["weight_buffer_bytes"], 2048);
    assert!((v["throughput_tops"].as_f64().unwrap() - 1.024).abs() < 1e-9);
}

#[test]
fn compare_dataflow_table() {
    let v = json(&ita(&["perf-report", "--dims", "64x64x64x1", "--compare-dataflow"]));
    let rows = v["dataflow"].as_array().unwrap();
    let ns: Vec<u64> = rows.iter().map(|r| r["n"].as_u64().unwrap()).collect();
    assert_eq!(ns, [4, 8, 16, 32]);
    assert!(rows.iter().all(|r| r["ratio"].as_f64().unwrap() > 1.0));
}

#[test]
fn invalid_config_exits_2() {
    assert_eq!(ita(&["perf-report", "--dims", "64x64x64x1", "--freq", "0"]).status.code(), Some(2));
    assert_eq!(ita(&["perf-report", "--dims", "64x64"]).status.code(), Some(2));
    assert_eq!(ita(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(ita(&["softmax-eval", "--dist", "cauchy"]).status.code(), Some(2));
    assert_eq!(ita(&["--help"]).status.code(), Some(0));
}

#[test]
fn single_token_probability_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = ita(&["attention-run", "--dims", "1x8x8x1", "--probs", "--out-dir", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let probs = read_tensor(dir.path().join("probs_h0.ita")).unwrap();
    assert_eq!(probs.data, TensorData::UInt8(vec![255]));
}

#[test]
fn manifest_run_matches_golden_and_overlap_only_changes_cycles() {
    let fx = fixtures_dir().join("s64_e64_p64_h1");
    let manifest = fx.join("manifest.toml");
    let golden = fs::read(fx.join("golden_output.ita")).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(ita(&["attention-run", "--manifest", path(&manifest), "--out-dir", path(a.path())]).status.success());
    assert!(ita(&[
        "attention-run",
        "--manifest",
        path(&manifest),
        "--out-dir",
        path(b.path()),
        "--no-softmax-overlap"
    ])
    .status
    .success());
    assert_eq!(fs::read(a.path().join("output.ita")).unwrap(), golden);
    assert_eq!(fs::read(b.path().join("output.ita")).unwrap(), golden);
    let cycles = |d: &Path| {
        let v: serde_json::Value = serde_json::from_slice(&fs::read(d.join("perf.json")).unwrap()).unwrap();
        v["total_cycles"].as_u64().unwrap()
    };
    assert!(cycles(b.path()) > cycles(a.path()));
}

#[test]
fn shape_mismatch_names_tensor_and_writes_nothing() {
    let src = fixtures_dir().join("s64_e64_p64_h1");
    let work = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(&src).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), work.path().join(entry.file_name())).unwrap();
    }
    fs::copy(src.join("bo.ita"), work.path().join("h0_bk.ita")).unwrap();
    fs::copy(src.join("golden_probs_h0.ita"), work.path().join("h0_wk.ita")).unwrap();
    let out_dir = work.path().join("out");

    let out =
        ita(&["attention-run", "--manifest", path(&work.path().join("manifest.toml")), "--out-dir", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("h0_wk"), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_dir.exists());

    fs::copy(src.join("h0_wk.ita"), work.path().join("h0_wk.ita")).unwrap();
    fs::copy(src.join("h0_wq.ita"), work.path().join("h0_wk.ita")).unwrap();
    let out =
        ita(&["attention-run", "--manifest", path(&work.path().join("manifest.toml")), "--out-dir", path(&out_dir)]);
    assert!(out.status.success());
}

#[test]
fn bias_shape_error_names_the_file() {
    let src = fixtures_dir().join("s64_e64_p64_h1");
    let work = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(&src).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), work.path().join(entry.file_name())).unwrap();
    }
    fs::copy(src.join("x.ita"), work.path().join("h0_bq.ita")).unwrap();
    let out = ita(&[
        "attention-run",
        "--manifest",
        path(&work.path().join("manifest.toml")),
        "--out-dir",
        path(&work.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("h0_bq"));
}

#[test]
fn softmax_eval_is_deterministic_and_thread_independent() {
    let run = |threads: &str| {
        ita(&["--threads", threads, "softmax-eval", "--seed", "9", "--rows", "300", "--dist", "peaked:0.1"])
    };
    let a = run("1");
    let b = run("0");
    assert_eq!(json(&a), json(&b));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn config_file_is_merged_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ita.toml");
    fs::write(&cfg, "[accelerator]\nn = 8\nfreq_hz = 1e9\n").unwrap();
    let v = json(&ita(&["--config", path(&cfg), "perf-report", "--dims", "64x64x64x1", "--n", "32"]));
    assert_eq!(v["config"]["n"], 32);
    assert_eq!(v["config"]["freq_hz"], 1e9);
    fs::write(&cfg, "[accelerator]\nbogus = 1\n").unwrap();
    assert_eq!(ita(&["--config", path(&cfg), "perf-report", "--dims", "64x64x64x1"]).status.code(), Some(2));
}

#[test]
fn verify_and_gen_fixture() {
    let out = ita(&["verify", "--cases", "30", "--m", "8", "--n", "4"]);
    let v = json(&out);
    assert_eq!(v["results"].as_array().unwrap().len(), 8);
    let dir = tempfile::tempdir().unwrap();
    let out = ita(&["gen-fixture", "--dims", "8x8x4x2", "--seed", "3", "--out-dir", path(dir.path())]);
    assert!(out.status.success());
    let run = ita(&[
        "attention-run",
        "--manifest",
        path(&dir.path().join("manifest.toml")),
        "--out-dir",
        path(&dir.path().join("o")),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
}
