#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_p2rgbd");

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env("RUST_LOG", "warn").output().unwrap()
}

/// Runs and requires success, returning stdout parsed as JSON.
pub fn run_json(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

/// A 16x16 oracle dataset and a briefly trained checkpoint inside `dir`.
pub fn trained(dir: &Path, slices: usize) -> (PathBuf, PathBuf) {
    let ds = dir.join("ds");
    if !ds.exists() {
        run_json(dir, &["gen-scene", "--out", "ds", "--frames", "6", "--resolution", "16"]);
    }
    let model = dir.join(format!("m{slices}.ckpt"));
    let s = slices.to_string();
    let m = model.to_str().unwrap();
    let args = ["train", "--dataset", "ds", "--slices", &s, "--channels", "16", "--epochs", "2"];
    let out = run(dir, &[&args[..], &["--batch-size", "2", "--out", m, "--report", "report.json"]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (ds, model)
}

pub fn png_dims(bytes: &[u8]) -> (u32, u32, image::ColorType) {
    let img = image::load_from_memory(bytes).unwrap();
    (img.width(), img.height(), img.color())
}
