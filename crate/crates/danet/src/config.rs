//! Run configuration: a fixed set of dotted keys with defaults, overridden
//! by an optional `key = value` file and then by command-line settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use danet_core::clustering::ClusterAlgo;
use danet_core::corpus::Recipe;
use danet_core::danet::ArchSpec;
use danet_core::dsp::StftConfig;
use danet_core::evalkit::EvalConfig;
use danet_core::pipeline::{AdamConfig, HyperParams, SeparateOptions};

use crate::checkpoint::parse_cell;
use crate::error::{Error, Result};

pub const CONFIG_ECHO: &str = "config.txt";

/// Every recognised key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "seed",
        "0",
        "global seed for synthesis, mixing, initialization and shuffling",
    ),
    (
        "data.corpus",
        "",
        "corpus root laid out as <speaker>/<utterance>.wav",
    ),
    ("data.out", "", "output directory for synth and mix"),
    (
        "data.manifest",
        "",
        "built dataset directory or its manifest.jsonl",
    ),
    ("run.dir", "", "training run directory"),
    ("run.resume", "false", "continue from run.dir/last.ckpt"),
    ("synth.speakers", "10", "number of synthetic speakers"),
    (
        "synth.utts_per_speaker",
        "50",
        "utterances per synthetic speaker",
    ),
    (
        "synth.utt_secs",
        "3",
        "mean synthetic utterance length in seconds",
    ),
    ("mix.train_min", "6", "training split target in minutes"),
    ("mix.valid_min", "2", "validation split target in minutes"),
    ("mix.test_min", "2", "test split target in minutes"),
    ("mix.snr_min", "-3", "lowest mixing SNR in dB"),
    ("mix.snr_max", "3", "highest mixing SNR in dB"),
    (
        "stft.win_len",
        "256",
        "analysis window in samples (32 ms at 8 kHz)",
    ),
    ("stft.hop", "64", "hop in samples (75% overlap)"),
    ("stft.fft_size", "256", "FFT length, a power of two"),
    (
        "features.floor_eps",
        "1e-7",
        "magnitude floor before the logarithm",
    ),
    ("model.layers", "2", "bidirectional recurrent layers"),
    ("model.hidden", "64", "units per direction"),
    ("model.embed_dim", "10", "embedding dimension K"),
    ("model.cell", "gru", "recurrent cell (only gru trains)"),
    ("train.lr0", "1e-3", "initial Adam learning rate"),
    (
        "train.patience",
        "3",
        "epochs without a new best before halving the rate",
    ),
    ("train.lr_min", "1e-6", "learning-rate floor"),
    (
        "train.epochs",
        "50",
        "total epochs (150 for the full-scale schedule)",
    ),
    ("train.batch_size", "8", "utterances per update"),
    ("train.grad_clip", "200", "global gradient-norm clip"),
    ("train.beta1", "0.9", "Adam beta1"),
    ("train.beta2", "0.999", "Adam beta2"),
    ("train.adam_eps", "1e-8", "Adam epsilon"),
    ("train.threads", "0", "worker threads (0 = all cores)"),
    (
        "train.no_clock",
        "false",
        "log zero wall time so logs compare byte for byte",
    ),
    ("separate.checkpoint", "", "model checkpoint"),
    ("separate.input", "", "mixture WAV"),
    (
        "separate.out_dir",
        "",
        "output directory (default: next to the input)",
    ),
    ("separate.speakers", "2", "sources to extract"),
    (
        "separate.cluster",
        "gmm",
        "embedding clustering: gmm or kmeans",
    ),
    (
        "separate.gate_db",
        "-30",
        "cluster only bins within this many dB of the peak (none disables)",
    ),
    (
        "eval.checkpoint",
        "",
        "model checkpoint (not needed with eval.oracle)",
    ),
    ("eval.split", "test", "split to score: train, valid or test"),
    ("eval.oracle", "none", "none, wfm, binary or mixture"),
    (
        "eval.report",
        "",
        "CSV path (default: report_<split>.csv in the current directory)",
    ),
    ("eval.proj_len", "512", "BSS-eval distortion filter length"),
    ("eval.sdr_cap", "100", "cap on reported ratios in dB"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::usage(format!("unknown config key {key:?}"))),
        }
    }

    /// Applies a `key=value` assignment.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::usage(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v)
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::usage(format!("cannot read config {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            self.apply(line)
                .map_err(|e| Error::usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .values
            .get(key)
            .ok_or_else(|| Error::usage(format!("unknown config key {key:?}")))?;
        raw.parse()
            .map_err(|_| Error::usage(format!("invalid value {raw:?} for {key}")))
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn render(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn echo_to(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(CONFIG_ECHO);
        std::fs::write(&p, self.render()).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    /// A path-valued key that must be set.
    pub fn path(&self, key: &str) -> Result<PathBuf> {
        match self.raw(key) {
            "" => Err(Error::usage(format!("{key} is required"))),
            p => Ok(PathBuf::from(p)),
        }
    }

    /// A path-valued key that must name something that exists.
    pub fn existing(&self, key: &str) -> Result<PathBuf> {
        let p = self.path(key)?;
        if !p.exists() {
            return Err(Error::usage(format!(
                "{key}: {} does not exist",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn stft(&self) -> Result<StftConfig> {
        let c = StftConfig {
            win_len: self.get("stft.win_len")?,
            hop: self.get("stft.hop")?,
            fft_size: self.get("stft.fft_size")?,
        };
        c.validate()
            .map_err(|e| Error::usage(format!("stft: {e}")))?;
        Ok(c)
    }

    pub fn floor_eps(&self) -> Result<f64> {
        let e: f64 = self.get("features.floor_eps")?;
        if !(e > 0.0) {
            return Err(Error::usage("features.floor_eps must be positive"));
        }
        Ok(e)
    }

    pub fn arch(&self) -> Result<ArchSpec> {
        let cell = self.raw("model.cell");
        let a = ArchSpec {
            input_dim: self.stft()?.bins(),
            num_layers: self.get("model.layers")?,
            hidden: self.get("model.hidden")?,
            embed_dim: self.get("model.embed_dim")?,
            cell: parse_cell(cell)
                .ok_or_else(|| Error::usage(format!("model.cell: unknown cell {cell:?}")))?,
        };
        a.validate()
            .map_err(|e| Error::usage(format!("model: {e}")))?;
        Ok(a)
    }

    pub fn hyper(&self) -> Result<HyperParams> {
        let h = HyperParams {
            lr0: self.get("train.lr0")?,
            lr_halve_patience: self.get("train.patience")?,
            lr_min: self.get("train.lr_min")?,
            epochs: self.get("train.epochs")?,
            batch_size: self.get("train.batch_size")?,
            grad_clip: self.get("train.grad_clip")?,
            adam: AdamConfig {
                beta1: self.get("train.beta1")?,
                beta2: self.get("train.beta2")?,
                eps: self.get("train.adam_eps")?,
            },
            seed: self.seed()?,
        };
        if h.epochs == 0 {
            return Err(Error::usage("train.epochs must be at least 1"));
        }
        h.validate()
            .map_err(|e| Error::usage(format!("train: {e}")))?;
        Ok(h)
    }

    pub fn recipe(&self) -> Result<Recipe> {
        let mins = |k: &str| -> Result<f64> {
            let v: f64 = self.get(k)?;
            if !(v >= 0.0) {
                return Err(Error::usage(format!("{k} must be nonnegative")));
            }
            Ok(v * 60.0)
        };
        let (lo, hi): (f64, f64) = (self.get("mix.snr_min")?, self.get("mix.snr_max")?);
        if !(lo <= hi) {
            return Err(Error::usage("mix.snr_min exceeds mix.snr_max"));
        }
        Ok(Recipe {
            targets_secs: [
                mins("mix.train_min")?,
                mins("mix.valid_min")?,
                mins("mix.test_min")?,
            ],
            snr_range_db: (lo, hi),
            seed: self.seed()?,
        })
    }

    pub fn separate_options(&self) -> Result<SeparateOptions> {
        let gate = self.raw("separate.gate_db");
        let gate_db = if gate == "none" {
            None
        } else {
            Some(self.get("separate.gate_db")?)
        };
        Ok(SeparateOptions {
            algo: self.get::<ClusterAlgo>("separate.cluster")?,
            seed: self.seed()?,
            gate_db,
        })
    }

    pub fn speakers(&self) -> Result<usize> {
        let n: usize = self.get("separate.speakers")?;
        if n == 0 {
            return Err(Error::usage("separate.speakers must be at least 1"));
        }
        Ok(n)
    }

    pub fn eval(&self) -> Result<EvalConfig> {
        let c = EvalConfig {
            proj_len: self.get("eval.proj_len")?,
            sdr_cap: self.get("eval.sdr_cap")?,
        };
        if c.proj_len == 0 || !(c.sdr_cap > 0.0) {
            return Err(Error::usage(
                "eval.proj_len and eval.sdr_cap must be positive",
            ));
        }
        Ok(c)
    }
}
