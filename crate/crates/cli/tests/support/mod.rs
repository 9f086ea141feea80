#![allow(dead_code)]

use std::path::{Path, PathBuf};

use treeattn::data::corpus::render_corpus;
use treeattn::Example;

pub struct Files {
    pub jsonl: PathBuf,
    pub deps: PathBuf,
}

pub fn write_corpus(dir: &Path, name: &str, examples: &[Example]) -> Files {
    let (jsonl, deps) = render_corpus(examples).unwrap();
    let files = Files {
        jsonl: dir.join(format!("{name}.jsonl")),
        deps: dir.join(format!("{name}.deps")),
    };
    std::fs::write(&files.jsonl, jsonl).unwrap();
    std::fs::write(&files.deps, deps).unwrap();
    files
}

/// Runs the CLI in-process; returns the exit code and captured stdout.
pub fn cli<S: AsRef<str>>(args: &[S]) -> (i32, String) {
    let mut out = Vec::new();
    let argv = std::iter::once("treeattn").chain(args.iter().map(AsRef::as_ref));
    let code = treeattn_cli::run(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

pub fn p(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

/// Trains a small model on `files` and returns the checkpoint path.
pub fn train_small(dir: &Path, variant: &str, files: &Files, extra: &[&str]) -> PathBuf {
    let ckpt = dir.join(format!("{variant}.ckpt"));
    let mut args = vec![
        "train".to_string(),
        "--variant".into(),
        variant.into(),
        "--train".into(),
        p(&files.jsonl),
        "--dep-sidecar".into(),
        p(&files.deps),
        "--checkpoint".into(),
        p(&ckpt),
        "--embedding-size".into(),
        "8".into(),
        "--hidden-size".into(),
        "6".into(),
        "--epochs".into(),
        "2".into(),
    ];
    if !extra.contains(&"--lr") {
        args.extend(["--lr".to_string(), "0.05".to_string()]);
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    let (code, out) = cli(&args);
    assert_eq!(code, 0, "train failed: {out}");
    ckpt
}
