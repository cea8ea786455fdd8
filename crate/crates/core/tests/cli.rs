use std::path::Path;
use std::process::{Command, Output};

use tahq_core::harness::{gaussian_tensor, load_tensor, save_tensor};
use tahq_core::pipeline::load_checkpoint;
use tahq_core::{ActivationTensor, Shape};

fn tahq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tahq"))
        .args(args)
        .env_remove("TAHQ_THREADS")
        .output()
        .expect("failed to launch tahq")
}

fn ok(args: &[&str]) -> String {
    let out = tahq(args);
    assert!(
        out.status.success(),
        "tahq {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn csv_rows(file: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(file).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let mut rows = vec![header];
    for rec in r.records() {
        rows.push(rec.unwrap().iter().map(String::from).collect());
    }
    rows
}

#[test]
fn quantize_dequantize_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let t = gaussian_tensor(Shape::new(2, 8, 64), 4).unwrap();
    let (src, blob, back) = (path(dir.path(), "a.taht"), path(dir.path(), "a.tahq"), path(dir.path(), "b.taht"));
    save_tensor(&src, &t).unwrap();

    let msg = ok(&["quantize", "--in", &src, "--out", &blob, "--tile-size", "32", "--p4", "0.8", "--tau", "2.0"]);
    assert!(msg.contains("2x8x64"), "{msg}");
    ok(&["dequantize", "--in", &blob, "--out", &back]);

    let restored: ActivationTensor<f32> = load_tensor(&back).unwrap();
    assert_eq!(restored.shape(), t.shape());
    assert!(t.relative_l2_error(&restored).unwrap() < 0.15);
    assert_eq!(&std::fs::read(&blob).unwrap()[..4], b"TAHQ");
}

#[test]
fn quantize_flags_change_the_blob() {
    let dir = tempfile::tempdir().unwrap();
    let t = gaussian_tensor(Shape::new(1, 4, 32), 5).unwrap();
    let src = path(dir.path(), "a.taht");
    save_tensor(&src, &t).unwrap();
    let default = path(dir.path(), "d.tahq");
    let plain = path(dir.path(), "p.tahq");
    ok(&["quantize", "--in", &src, "--out", &default]);
    ok(&["quantize", "--in", &src, "--out", &plain, "--no-adaptive", "--no-hadamard"]);
    let (d, p) = (std::fs::read(&default).unwrap(), std::fs::read(&plain).unwrap());
    assert_eq!(d[21], 0b11);
    assert_eq!(p[21], 0);
}

#[test]
fn train_writes_loss_csv_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "loss.csv");
    let ckpt = path(dir.path(), "model.tahm");
    ok(&["train", "--task", "tiny", "--steps", "5", "--csv", &csv, "--checkpoint", &ckpt]);
    let rows = csv_rows(&csv);
    assert_eq!(rows[0], ["step", "loss", "bits_fw_mean", "bytes_fw", "bytes_bw"]);
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[1][0], "1");
    let model = load_checkpoint(&ckpt).unwrap();
    assert_eq!(model.dims.channels, 32);
}

#[test]
fn baseline_reports_raw_bits() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "loss.csv");
    ok(&["train", "--task", "tiny", "--steps", "2", "--baseline", "--csv", &csv]);
    let rows = csv_rows(&csv);
    assert_eq!(rows[1][2].parse::<f64>().unwrap(), 64.0);
}

#[test]
fn strict_theory_rejects_large_beta() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "loss.csv");
    let out = tahq(&[
        "train", "--task", "tiny", "--steps", "2", "--strict-theory", "--delta", "0.5", "--lsmooth", "1.0", "--beta1",
        "0.1", "--csv", &csv,
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn strict_theory_needs_delta_and_l() {
    let out = tahq(&["train", "--strict-theory", "--csv", "x.csv"]);
    assert!(!out.status.success());
}

#[test]
fn validate_modes_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["step", "fullbatch"] {
        let csv = path(dir.path(), &format!("{mode}.csv"));
        let msg = ok(&["validate", "--mode", mode, "--steps", "4", "--csv", &csv]);
        assert!(msg.contains("implied delta"), "{msg}");
        let rows = csv_rows(&csv);
        assert_eq!(rows[0], ["step", "mode", "ratio"]);
        assert_eq!(rows.len(), 5);
        assert!(rows[1..].iter().all(|r| r[1] == mode && r[2].parse::<f64>().unwrap() < 1.0));
    }
}

#[test]
fn bench_reports_both_variants() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "bench.csv");
    ok(&["bench", "--shape", "2x16x256", "--tile-size", "64", "--p4", "0.5", "--repeats", "1", "--csv", &csv]);
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][0], "gaussian");
    assert_eq!(rows[2][0], "outlier");
    assert_eq!(rows[1][4].parse::<f64>().unwrap(), 3.5);
}

#[test]
fn bench_rejects_bad_shape() {
    assert!(!tahq(&["bench", "--shape", "2x16", "--csv", "x.csv"]).status.success());
    assert!(!tahq(&["bench", "--shape", "2x16x100", "--csv", "x.csv"]).status.success());
}

#[test]
fn ablate_prints_paired_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "ablate.csv");
    let msg = ok(&["ablate", "--study", "hadamard", "--seeds", "0", "--at", "2,4", "--csv", &csv]);
    assert_eq!(msg.lines().count(), 2);
    let rows = csv_rows(&csv);
    assert_eq!(rows[0][1], "train_hadamard_on");
    assert_eq!(rows.len(), 3);
}

#[test]
fn missing_input_is_an_error() {
    let out = tahq(&["dequantize", "--in", "/nonexistent.tahq", "--out", "/tmp/x.taht"]);
    assert!(!out.status.success());
}
