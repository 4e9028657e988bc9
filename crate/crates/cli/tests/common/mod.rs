#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cl4st"))
}

pub fn run(args: &[&str]) -> Output {
    let out = bin().args(args).env_remove("CL4ST_SEED").output().expect("binary runs");
    out
}

pub fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "cl4st {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Small traffic dataset.
pub fn traffic_data(dir: &Path) -> PathBuf {
    let d = dir.join("traffic");
    ok(&["synth", "--out", p(&d), "--nodes", "6", "--steps", "300", "--seed", "1"]);
    d
}

/// Small crime grid (3 x 3 cells, 2 categories).
pub fn crime_data(dir: &Path) -> PathBuf {
    let d = dir.join("crime");
    ok(&[
        "synth", "--out", p(&d), "--kind", "crime_grid", "--rows", "3", "--cols", "3", "--categories", "2",
        "--steps", "200", "--seed", "2",
    ]);
    d
}

/// Tiny model config for `data`, writing runs to `out`.
pub fn config(dir: &Path, kind: &str, data: &Path, out: &Path, extra: &str) -> PathBuf {
    let (t_in, t_out) = if kind == "crime_grid" { (6, 1) } else { (4, 3) };
    let body = format!(
        r#"{{
  "dataset": {{"kind": "{kind}", "path": "{}", "t_in": {t_in}, "t_out": {t_out}{}}},
  "model": {{"d": 4, "d_s": 8, "d_t": 8, "d_z": 2, "pos_dim": 2, "k_spatial": 2, "k_temporal": 1,
            "decoder_dim": 4, "decoder_hidden": 8, "proj_dim": 4}},
  "generator": {{"gin_hidden": 4, "d1": 2, "phi_hidden": [8]}},
  "train": {{"batch_size": 4, "max_epochs": 2, "seed": 3, "max_batches_per_epoch": 4}},
  "out_dir": "{}"{extra}
}}"#,
        p(data),
        if kind == "crime_grid" { r#", "split": {"ratio": [7, 0, 1], "val_days": 10}"# } else { "" },
        p(out),
    );
    let path = dir.join(format!("cfg_{}.json", out.file_name().unwrap().to_string_lossy()));
    std::fs::write(&path, body).unwrap();
    path
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn assert_schema_valid(report: &serde_json::Value) {
    let schema: serde_json::Value = serde_json::from_str(cl4st_cli::REPORT_SCHEMA).unwrap();
    let v = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = v.iter_errors(report).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "report violates schema: {errors:?}");
}

pub fn read_csv(path: &Path, headers: bool) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(headers).from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
}
