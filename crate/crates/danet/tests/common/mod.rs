#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use danet::config::RunConfig;
use danet::dataset::{build_dataset, scan_corpus, synth_corpus, Manifest};
use tempfile::TempDir;

pub struct Fixture {
    _dir: TempDir,
    pub corpus: PathBuf,
    pub data: PathBuf,
    pub manifest: Manifest,
}

/// A small synthetic corpus and dataset shared by the tests of one binary.
pub fn small() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        let data = dir.path().join("data");
        synth_corpus(&corpus, 4, 24, 1.5, 3).unwrap();
        let mut cfg = RunConfig::default();
        for kv in [
            "mix.train_min=0.3",
            "mix.valid_min=0.1",
            "mix.test_min=0.1",
            "seed=3",
        ] {
            cfg.apply(kv).unwrap();
        }
        let manifest = build_dataset(
            &scan_corpus(&corpus).unwrap(),
            &cfg.recipe().unwrap(),
            &data,
        )
        .unwrap();
        Fixture {
            _dir: dir,
            corpus,
            data,
            manifest,
        }
    })
}

pub fn danet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_danet"))
        .args(args)
        .output()
        .expect("spawn danet")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
