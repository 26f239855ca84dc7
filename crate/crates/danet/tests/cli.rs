mod common;

use common::{code, danet, s, small, stderr, stdout};
use danet::training::parse_log;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

/// One toy training run (1 layer, 16 units per direction, 5 epochs) shared
/// by the separation tests.
fn toy_run() -> &'static Path {
    static RUN: OnceLock<tempfile::TempDir> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let f = small();
        let o = danet(&[
            "train",
            "--manifest",
            s(&f.data),
            "--run",
            s(dir.path()),
            "--epochs",
            "5",
            "--layers",
            "1",
            "--hidden",
            "16",
            "--quiet",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        dir
    })
    .path()
}

#[test]
fn count_params_matches_the_table() {
    let o = danet(&["count-params", "--cell", "gru"]);
    assert_eq!((code(&o), stdout(&o).trim()), (0, "7197180"));
    let o = danet(&["count-params", "--cell", "lstm"]);
    assert_eq!((code(&o), stdout(&o).trim()), (0, "9079380"));
    assert_eq!(code(&danet(&["count-params", "--cell", "rnn"])), 2);
}

#[test]
fn gradcheck_passes() {
    let o = danet(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let last = stdout(&o).lines().last().unwrap().to_string();
    let err: f64 = last.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(err < 1e-4, "{last}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&danet(&[])), 2);
    assert_eq!(code(&danet(&["frobnicate"])), 2);
    let o = danet(&["mix", "--out", "/tmp/never"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("data.corpus"), "{}", stderr(&o));
    let o = danet(&[
        "mix",
        "--corpus",
        "/definitely/missing",
        "--out",
        "/tmp/never",
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("data.corpus"));
    let f = small();
    let o = danet(&[
        "train",
        "--manifest",
        s(&f.data),
        "--run",
        "/tmp/never",
        "--epochs",
        "0",
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = danet(&[
        "train",
        "--manifest",
        s(&f.data),
        "--run",
        "/tmp/never",
        "--set",
        "train.bogus=1",
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train.bogus"));
    let wav = f.data.join(&f.manifest.records[0].mixture);
    let o = danet(&[
        "separate",
        "--checkpoint",
        "/missing.ckpt",
        "--input",
        s(&wav),
    ]);
    assert_eq!(code(&o), 2);
    assert!(code(&danet(&["--help"])) == 0);
}

#[test]
fn mix_is_reproducible_and_echoes_config() {
    let f = small();
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &Path| {
        let o = danet(&[
            "mix",
            "--corpus",
            s(&f.corpus),
            "--out",
            s(out),
            "--train-min",
            "0.2",
            "--valid-min",
            "0.05",
            "--test-min",
            "0.05",
            "--seed",
            "7",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(out.join("manifest.jsonl")).unwrap()
    };
    let a = run(&dir.path().join("a"));
    let b = run(&dir.path().join("b"));
    assert_eq!(a, b);
    // the echoed config alone reproduces the run
    let echo = dir.path().join("a").join("config.txt");
    let text = fs::read_to_string(&echo).unwrap();
    assert!(text.contains("seed = 7") && text.contains("mix.train_min = 0.2"));
    let c = dir.path().join("c");
    let o = danet(&["mix", "--config", s(&echo), "--out", s(&c)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(c.join("manifest.jsonl")).unwrap(), a);
}

#[test]
fn synth_with_defaults_writes_wavs() {
    let dir = tempfile::tempdir().unwrap();
    let o = danet(&[
        "synth",
        "--out",
        s(dir.path()),
        "--speakers",
        "2",
        "--utts",
        "2",
        "--secs",
        "0.5",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = hound::WavReader::open(dir.path().join("spk01").join("utt001.wav")).unwrap();
    assert_eq!((r.spec().sample_rate, r.spec().channels), (8000, 1));
    assert!(dir.path().join("config.txt").exists());
}

#[test]
fn toy_training_logs_five_epochs_and_resumes() {
    let run = toy_run();
    let log = parse_log(&fs::read_to_string(run.join("train_log.csv")).unwrap(), run).unwrap();
    assert_eq!(log.records.len(), 5);
    assert!(run.join("best.ckpt").exists() && run.join("last.ckpt").exists());

    let dir = tempfile::tempdir().unwrap();
    for f in ["last.ckpt", "best.ckpt", "train_log.csv"] {
        fs::copy(run.join(f), dir.path().join(f)).unwrap();
    }
    let f = small();
    let o = danet(&[
        "train",
        "--manifest",
        s(&f.data),
        "--run",
        s(dir.path()),
        "--epochs",
        "7",
        "--layers",
        "1",
        "--hidden",
        "16",
        "--quiet",
        "--resume",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = parse_log(
        &fs::read_to_string(dir.path().join("train_log.csv")).unwrap(),
        dir.path(),
    )
    .unwrap();
    let epochs: Vec<usize> = log.records.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![1, 2, 3, 4, 5, 6, 7]);

    let empty = tempfile::tempdir().unwrap();
    let o = danet(&[
        "train",
        "--manifest",
        s(&f.data),
        "--run",
        s(empty.path()),
        "--resume",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn separate_writes_one_file_per_speaker() {
    let run = toy_run();
    let f = small();
    let rec = f
        .manifest
        .records
        .iter()
        .find(|r| r.split == "test")
        .unwrap();
    let input = f.data.join(&rec.mixture);
    let out = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for algo in ["gmm", "kmeans"] {
        let dir = out.path().join(algo);
        let o = danet(&[
            "separate",
            "--checkpoint",
            s(&run.join("best.ckpt")),
            "--input",
            s(&input),
            "--out-dir",
            s(&dir),
            "--cluster",
            algo,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let stem = input.file_stem().unwrap().to_str().unwrap();
        let mix_len = hound::WavReader::open(&input).unwrap().duration();
        for i in 1..=2 {
            let p = dir.join(format!("{stem}_spk{i}.wav"));
            assert_eq!(hound::WavReader::open(&p).unwrap().duration(), mix_len);
        }
        bytes.push(fs::read(dir.join(format!("{stem}_spk1.wav"))).unwrap());
    }
    assert_ne!(bytes[0], bytes[1], "gmm and kmeans gave identical output");

    let o = danet(&[
        "separate",
        "--checkpoint",
        s(&run.join("best.ckpt")),
        "--input",
        s(&input),
        "--speakers",
        "0",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn separate_rejects_wrong_rate() {
    let run = toy_run();
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("x.wav");
    let w = danet_core::dsp::Waveform::new(vec![0.1; 1600], 16_000).unwrap();
    danet::wav::write_wav(&wav, &w).unwrap();
    let o = danet(&[
        "separate",
        "--checkpoint",
        s(&run.join("best.ckpt")),
        "--input",
        s(&wav),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("8000"), "{}", stderr(&o));
}

#[test]
fn eval_writes_report() {
    let run = toy_run();
    let f = small();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let o = danet(&[
        "eval",
        "--manifest",
        s(&f.data),
        "--checkpoint",
        s(&run.join("best.ckpt")),
        "--out",
        s(&csv),
        "--proj-len",
        "64",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("mean SDR"));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "utt_id,speaker,permuted_to,sdr_db,sir_db,sar_db");
    let n = f.manifest.split(danet_core::corpus::Split::Test).count();
    assert_eq!(lines.len(), 1 + 2 * n + 2);
    assert!(lines[lines.len() - 2].starts_with("MEAN,"));
    assert_eq!(lines[lines.len() - 1], "PESQ,n/a,,,,");

    let o = danet(&[
        "eval",
        "--manifest",
        s(&f.data),
        "--oracle",
        "wfm",
        "--out",
        s(&csv),
        "--proj-len",
        "64",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        code(&danet(&[
            "eval",
            "--manifest",
            s(&f.data),
            "--oracle",
            "magic"
        ])),
        2
    );
    assert_eq!(code(&danet(&["eval", "--manifest", s(&f.data)])), 2);
}
