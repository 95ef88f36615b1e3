#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn satstereo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satstereo")).args(args).env("RUST_LOG", "info").output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = satstereo(args);
    assert!(out.status.success(), "{args:?} failed\nstdout:\n{}\nstderr:\n{}", text(&out.stdout), text(&out.stderr));
    text(&out.stdout)
}

pub fn code(args: &[&str]) -> i32 {
    satstereo(args).status.code().expect("exit code")
}

pub fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes a dataset of `count` samples at `dir/name`.
pub fn synth(dir: &Path, name: &str, seed: u64, count: usize) -> PathBuf {
    let root = dir.join(name);
    ok(&["synth", "--out", s(&root), "--seed", &seed.to_string(), "--count", &count.to_string()]);
    root
}

/// Copy of a dataset without some of its subdirectories or files.
pub fn copy_without(src: &Path, dst: &Path, skip: &[&str]) {
    std::fs::create_dir_all(dst).unwrap();
    for e in std::fs::read_dir(src).unwrap() {
        let e = e.unwrap();
        let name = e.file_name().to_string_lossy().into_owned();
        if skip.contains(&name.as_str()) {
            continue;
        }
        if e.path().is_dir() {
            copy_without(&e.path(), &dst.join(&name), &[]);
        } else {
            std::fs::copy(e.path(), dst.join(&name)).unwrap();
        }
    }
}

/// A quick cascade run: `epochs` epochs of one step each.
pub fn quick_train(data: &Path, out: &Path, manner: &str, epochs: usize, extra: &[&str]) -> String {
    let e = epochs.to_string();
    let mut args = vec![
        "train", "--family", "cascade", "--manner", manner, "--data", s(data), "--out", s(out), "--epochs", &e,
        "--steps-per-epoch", "1",
    ];
    args.extend_from_slice(extra);
    ok(&args)
}
