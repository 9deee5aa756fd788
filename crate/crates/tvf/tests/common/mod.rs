#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// A model small enough to train every stage in a few seconds.
pub const TINY_CONFIG: &str = "\
model.latent_size = 8
model.plane_channels = 4
model.lift_dim = 8
model.groups = 2
model.ctx_tokens = 2
model.ctx_dim = 8
backbone.c0 = 8
backbone.c1 = 8
backbone.temb = 16
diffusion.steps = 10
fusion.samples = 8
data.objects = 4
data.eval_objects = 2
data.views = 4
stage0.epochs = 2
stage0.batch_size = 2
stage0.repeats = 1
stage1.epochs = 2
stage1.batch_size = 2
stage1.repeats = 1
stage2.epochs = 2
stage2.batch_size = 2
stage2.repeats = 1
";

pub fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, format!("{TINY_CONFIG}{extra}")).unwrap();
    path
}

pub fn tvf(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tvf"));
    cmd.args(args).env("RUST_LOG", "warn");
    match threads {
        Some(t) => cmd.env("TVF_THREADS", t),
        None => cmd.env_remove("TVF_THREADS"),
    };
    cmd.output().unwrap()
}

/// Run and require success, returning stderr for inspection.
pub fn ok(args: &[&str]) -> String {
    let out = tvf(args, None);
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(out.status.success(), "tvf {args:?} failed: {err}");
    err
}

pub fn code(args: &[&str], threads: Option<&str>) -> (i32, String) {
    let out = tvf(args, threads);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn gen(cfg: &Path, out: &Path, threads: Option<&str>) {
    let o = tvf(&["--config", s(cfg), "gen-data", "--out", s(out)], threads);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

pub fn train(cfg: &Path, data: &Path, runs: &Path, stage: &str, extra: &[&str]) {
    let mut args = vec!["--config", s(cfg), "train", "--stage", stage, "--data", s(data), "--out", s(runs)];
    args.extend_from_slice(extra);
    ok(&args);
}

pub fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Every file in `dir`, by name, with its bytes.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), read(&e.path()))
        })
        .collect();
    out.sort();
    out
}

/// gen-data, three stages, a sample and an eval into `root`.
pub fn full_run(root: &Path) {
    let cfg = write_config(root, "");
    let data = root.join("data");
    let runs = root.join("runs");
    gen(&cfg, &data, None);
    for st in ["0", "1", "2"] {
        train(&cfg, &data, &runs, st, &[]);
    }
    ok(&[
        "--config",
        s(&cfg),
        "sample",
        "--ckpt",
        s(&runs),
        "--data",
        s(&data),
        "--views",
        "0,90",
        "--target",
        "135",
        "--seed",
        "3",
        "--out",
        s(&root.join("sample")),
        "--pgm",
        "--dump-fused",
    ]);
    ok(&["--config", s(&cfg), "eval", "--ckpt", s(&runs), "--data", s(&data), "--out", s(&root.join("eval.csv"))]);
}
