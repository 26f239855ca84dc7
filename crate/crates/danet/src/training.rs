//! Training runs on a built dataset: example preparation, a rayon executor,
//! the CSV log and best/last checkpoints in a run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use danet_core::corpus::Split;
use danet_core::danet::{ArchSpec, ModelParams};
use danet_core::dsp::{FeatureStats, StftConfig};
use danet_core::pipeline::{
    self, example_gradient, example_loss, Checkpoint, EpochRecord, Example, Executor, HyperParams,
    TrainHooks, TrainLog,
};
use rayon::prelude::*;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::dataset::{load_split, Manifest};
use crate::error::{Error, Result};

pub const LOG_FILE: &str = "train_log.csv";
pub const BEST_FILE: &str = "best.ckpt";
pub const LAST_FILE: &str = "last.ckpt";
pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,lr,seconds";

/// Per-utterance work on the rayon pool; results keep input order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Parallel;

impl Executor for Parallel {
    fn gradients(
        &self,
        params: &ModelParams,
        batch: &[&Example],
    ) -> Vec<danet_core::Result<(f64, Vec<f64>)>> {
        batch
            .par_iter()
            .map(|ex| example_gradient(params, ex))
            .collect()
    }

    fn losses(&self, params: &ModelParams, items: &[Example]) -> Vec<danet_core::Result<f64>> {
        items
            .par_iter()
            .map(|ex| example_loss(params, ex))
            .collect()
    }
}

pub fn prepare_split(
    m: &Manifest,
    split: Split,
    cfg: &StftConfig,
    floor_eps: f64,
) -> Result<Vec<Example>> {
    let loaded = load_split(m, split)?;
    loaded
        .par_iter()
        .map(|l| {
            Ok(Example::prepare(
                &l.mixture,
                &[&l.sources[0], &l.sources[1]],
                cfg,
                floor_eps,
            )?)
        })
        .collect()
}

pub fn format_log(log: &TrainLog) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in &log.records {
        writeln!(
            s,
            "{},{},{},{},{:.3}",
            r.epoch, r.train_loss, r.val_loss, r.lr, r.seconds
        )
        .unwrap();
    }
    s
}

pub fn parse_log(text: &str, path: &Path) -> Result<TrainLog> {
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::format(path, "unexpected training log header"));
    }
    let records = lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::format(path, format!("bad row {l:?}")))
            };
            Ok(EpochRecord {
                epoch: num(0)? as usize,
                train_loss: num(1)?,
                val_loss: num(2)?,
                lr: num(3)?,
                seconds: num(4)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TrainLog { records })
}

#[derive(Debug, Clone)]
pub struct TrainRequest {
    pub manifest: Manifest,
    pub run_dir: PathBuf,
    pub hyper: HyperParams,
    pub arch: ArchSpec,
    pub stft: StftConfig,
    pub floor_eps: f64,
    /// Continue from `run_dir/last.ckpt`.
    pub resume: bool,
    /// Report zero seconds per epoch so logs are byte-comparable.
    pub no_clock: bool,
}

struct RunHooks<'a> {
    dir: &'a Path,
    log: TrainLog,
    start: Instant,
    no_clock: bool,
    verbose: bool,
}

impl TrainHooks for RunHooks<'_> {
    fn now(&mut self) -> f64 {
        if self.no_clock {
            0.0
        } else {
            self.start.elapsed().as_secs_f64()
        }
    }

    fn on_epoch(
        &mut self,
        r: &EpochRecord,
        state: &Checkpoint,
        is_best: bool,
    ) -> danet_core::Result<()> {
        self.log.records.push(*r);
        if self.verbose {
            eprintln!(
                "epoch {:>3}  train {:.4}  val {:.4}  lr {:.2e}{}",
                r.epoch,
                r.train_loss,
                r.val_loss,
                r.lr,
                if is_best { "  *" } else { "" }
            );
        }
        let persist = || -> Result<()> {
            if is_best {
                save_checkpoint(state, &self.dir.join(BEST_FILE))?;
            }
            save_checkpoint(state, &self.dir.join(LAST_FILE))?;
            let p = self.dir.join(LOG_FILE);
            std::fs::write(&p, format_log(&self.log)).map_err(|e| Error::io(&p, e))
        };
        persist().map_err(|e| {
            danet_core::Error::InvalidArgument(format!("saving epoch {}: {e}", r.epoch))
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub log: TrainLog,
    pub last: Checkpoint,
}

pub fn run_training(req: &TrainRequest, verbose: bool) -> Result<TrainSummary> {
    let dir = &req.run_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut train_set = prepare_split(&req.manifest, Split::Train, &req.stft, req.floor_eps)?;
    let mut valid_set = prepare_split(&req.manifest, Split::Valid, &req.stft, req.floor_eps)?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::Runtime(
            "the manifest needs non-empty train and valid splits".into(),
        ));
    }
    let (state, prior) = if req.resume {
        let path = dir.join(LAST_FILE);
        if !path.exists() {
            return Err(Error::usage(format!(
                "--resume: no checkpoint at {}",
                path.display()
            )));
        }
        let ck = load_checkpoint(&path)?;
        if ck.params.arch() != &req.arch || ck.stft != req.stft {
            return Err(Error::usage(
                "--resume: architecture or STFT settings differ from the checkpoint",
            ));
        }
        let log_path = dir.join(LOG_FILE);
        let mut log = match std::fs::read_to_string(&log_path) {
            Ok(t) => parse_log(&t, &log_path)?,
            Err(_) => TrainLog::default(),
        };
        log.records.retain(|r| r.epoch <= ck.epoch);
        (ck, log)
    } else {
        let stats = FeatureStats::fit(train_set.iter().map(|e| &e.log_mag))?;
        let mut ck = Checkpoint::fresh(
            req.arch,
            stats,
            req.stft,
            danet_core::corpus::CORPUS_RATE,
            &req.hyper,
        )?;
        ck.floor_eps = req.floor_eps;
        (ck, TrainLog::default())
    };
    for ex in train_set.iter_mut().chain(valid_set.iter_mut()) {
        ex.standardize(&state.params.stats)?;
    }
    let mut hooks = RunHooks {
        dir,
        log: prior,
        start: Instant::now(),
        no_clock: req.no_clock,
        verbose,
    };
    let out = pipeline::train(
        state, &train_set, &valid_set, &req.hyper, &Parallel, &mut hooks,
    )
    .map_err(|e| {
        let last = hooks.log.records.last().map(|r| {
            format!(
                " (last finite losses: epoch {} train {} val {})",
                r.epoch, r.train_loss, r.val_loss
            )
        });
        Error::Runtime(format!("{e}{}", last.unwrap_or_default()))
    })?;
    Ok(TrainSummary {
        log: hooks.log,
        last: out.last,
    })
}
