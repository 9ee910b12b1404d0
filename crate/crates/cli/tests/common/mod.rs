#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mhae_core::data::{synthetic_fixture, write_idx_split, Split};

/// Writes a small two-class IDX dataset (4x4 images, labels 0 and 1).
pub fn write_fixture(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    let all = synthetic_fixture(31, 360, 16);
    let train: Vec<usize> = (0..240).collect();
    let test: Vec<usize> = (240..360).collect();
    write_idx_split(&all.subset(&train), &data, Split::Train).unwrap();
    write_idx_split(&all.subset(&test), &data, Split::Test).unwrap();
    data
}

/// A config sized for the fixture. `extra` is merged over the defaults.
pub fn write_config(dir: &Path, data: &Path, extra: serde_json::Value) -> PathBuf {
    let mut cfg = serde_json::json!({
        "data_dir": data,
        "hidden_dims": [8],
        "latent_dim": 3,
        "epochs": 8,
        "batch_size": 16,
        "k": 2,
        "trials": 1,
        "histogram_bins": 5,
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn mhae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhae"))
        .args(args)
        .env_remove("MHAE_DATA_DIR")
        .output()
        .unwrap()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}
