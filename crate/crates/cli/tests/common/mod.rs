#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SMALL_CONFIG: &str = "\
geometry.n_across = 9
geometry.n_along = 25
prior.n_modes = 30
rom.latent_dim = 4
rom.encoder_widths = 16
rom.decoder_widths = 16
rom.hidden_widths = 8
rom.epochs = 3
rom.batch_size = 8
inversion.max_iterations = 4
inversion.uq_samples = 16
";

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riverbed"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Runs every subcommand once inside `dir` and returns the artifact tree.
pub fn full_pipeline(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    std::fs::write(dir.join("run.cfg"), SMALL_CONFIG).unwrap();
    let c = ["--config", "run.cfg"];
    let with = |args: &[&'static str]| -> Vec<&'static str> { args.iter().copied().chain(c).collect() };
    ok(dir, &with(&["generate", "--n", "40", "--seed", "3", "--out", "train.vgd"]));
    ok(dir, &with(&["generate", "--n", "6", "--seed", "4", "--out", "test.vgd"]));
    ok(dir, &with(&["train", "--dataset", "train.vgd", "--rom", "sve", "--out", "sve.vgm"]));
    ok(dir, &with(&["train", "--dataset", "train.vgd", "--rom", "pca", "--out", "pca.vgm"]));
    ok(
        dir,
        &with(&[
            "invert", "--model", "sve.vgm", "--dataset", "test.vgd", "--record", "1", "--mask-points", "30",
            "--save-obs", "obs.vgo", "--heatmaps", "maps", "--out", "est.vgr",
        ]),
    );
    ok(dir, &with(&["invert", "--model", "pca.vgm", "--obs", "obs.vgo", "--out", "est_pca.vgr"]));
    ok(
        dir,
        &with(&["evaluate", "--model", "sve.vgm", "--dataset", "train.vgd", "--test", "test.vgd", "--max-inversions", "2", "--csv", "eval.csv"]),
    );
    ok(dir, &["diagnose", "hessian", "--model", "sve.vgm", "--dataset", "test.vgd", "--out-dir", "hess"]);
    ok(
        dir,
        &with(&["diagnose", "mahalanobis", "--model", "sve.vgm", "--train", "train.vgd", "--test", "same=test.vgd", "--out-dir", "maha"]),
    );
    ok(
        dir,
        &with(&["diagnose", "sparsity", "--model", "pca.vgm", "--dataset", "test.vgd", "--counts", "full,60,20", "--max-records", "3", "--out-dir", "sparse"]),
    );
    ok(
        dir,
        &with(&["diagnose", "latent-sweep", "--train", "train.vgd", "--test", "test.vgd", "--dims", "2,4", "--out-dir", "sweep"]),
    );
    collect(dir)
}

fn collect(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}
