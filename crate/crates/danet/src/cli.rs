//! Command-line surface. Exit codes: 0 success, 1 runtime failure, 2 usage
//! or configuration error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use danet_core::corpus::Split;
use danet_core::danet::gradcheck::{check, tiny_problem};
use danet_core::danet::{count_params, ArchSpec};
use danet_core::pipeline::{separate, OracleMask};

use crate::checkpoint::{load_checkpoint, parse_cell};
use crate::config::{RunConfig, KEYS};
use crate::dataset::{build_dataset, read_manifest, scan_corpus, synth_corpus, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_set, Estimator};
use crate::training::{run_training, TrainRequest, BEST_FILE, LOG_FILE};
use crate::wav::{read_wav, write_wav};

#[derive(Debug, Parser)]
#[command(
    name = "danet",
    version,
    about = "Two-speaker separation with a BGRU deep attractor network"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// `key = value` config file; see `danet keys`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.lr0=5e-4`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic multi-speaker corpus of 8 kHz WAVs.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        speakers: Option<usize>,
        #[arg(long)]
        utts: Option<usize>,
        #[arg(long)]
        secs: Option<f64>,
    },
    /// Build a two-speaker mixture dataset from a corpus directory.
    Mix {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        train_min: Option<f64>,
        #[arg(long)]
        valid_min: Option<f64>,
        #[arg(long)]
        test_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        snr_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        snr_max: Option<f64>,
    },
    /// Train the embedding network on a built dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        embed_dim: Option<usize>,
        #[arg(long)]
        lr0: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        /// Continue from the run directory's last checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Separate a mixture WAV into `<stem>_spk<i>.wav` files.
    Separate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        speakers: Option<usize>,
        /// gmm (default) or kmeans.
        #[arg(long)]
        cluster: Option<String>,
    },
    /// Score a dataset split with BSS-eval and write a CSV report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        /// wfm, binary or mixture instead of a model.
        #[arg(long)]
        oracle: Option<String>,
        #[arg(long)]
        cluster: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        proj_len: Option<usize>,
    },
    /// Print the closed-form parameter count of an architecture.
    CountParams {
        #[arg(long, default_value = "gru")]
        cell: String,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 300)]
        hidden: usize,
        #[arg(long, default_value_t = 20)]
        embed_dim: usize,
        #[arg(long, default_value_t = 129)]
        input_dim: usize,
    },
    /// Finite-difference check of the analytic gradient on a tiny network.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
    /// List every config key with its default.
    Keys,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandOutcome {
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

fn config(common: &Common, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &common.config {
        cfg.load_file(p)?;
    }
    if let Some(s) = common.seed {
        cfg.set("seed", &s.to_string())?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    for a in &common.set {
        cfg.apply(a)?;
    }
    Ok(cfg)
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(|x| x.to_string())
}

fn p(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|x| x.display().to_string())
}

fn set_threads(cfg: &RunConfig) -> Result<()> {
    let n: usize = cfg.get("train.threads")?;
    if n > 0 {
        // Fails only if the pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<CommandOutcome> {
    match cli.command {
        Command::Synth {
            common,
            out,
            speakers,
            utts,
            secs,
        } => {
            let cfg = config(
                &common,
                &[
                    ("data.out", p(&out)),
                    ("synth.speakers", s(&speakers)),
                    ("synth.utts_per_speaker", s(&utts)),
                    ("synth.utt_secs", s(&secs)),
                ],
            )?;
            let out = cfg.path("data.out")?;
            let n: usize = cfg.get("synth.speakers")?;
            if n < 2 {
                return Err(Error::usage("synth.speakers must be at least 2"));
            }
            synth_corpus(
                &out,
                n,
                cfg.get("synth.utts_per_speaker")?,
                cfg.get("synth.utt_secs")?,
                cfg.seed()?,
            )?;
            let echo = cfg.echo_to(&out)?;
            Ok(CommandOutcome {
                summary: format!("wrote {n} synthetic speakers to {}", out.display()),
                artifacts: vec![out, echo],
            })
        }
        Command::Mix {
            common,
            corpus,
            out,
            train_min,
            valid_min,
            test_min,
            snr_min,
            snr_max,
        } => {
            let cfg = config(
                &common,
                &[
                    ("data.corpus", p(&corpus)),
                    ("data.out", p(&out)),
                    ("mix.train_min", s(&train_min)),
                    ("mix.valid_min", s(&valid_min)),
                    ("mix.test_min", s(&test_min)),
                    ("mix.snr_min", s(&snr_min)),
                    ("mix.snr_max", s(&snr_max)),
                ],
            )?;
            let corpus = cfg.existing("data.corpus")?;
            let out = cfg.path("data.out")?;
            let recipe = cfg.recipe()?;
            let table = scan_corpus(&corpus)?;
            for (f, why) in &table.skipped {
                eprintln!("skipped {}: {why}", f.display());
            }
            let m = build_dataset(&table, &recipe, &out)?;
            let echo = cfg.echo_to(&out)?;
            let secs = |sp: Split| m.split(sp).map(|r| r.duration_secs).sum::<f64>();
            Ok(CommandOutcome {
                summary: format!(
                    "{} mixtures: train {:.1} s, valid {:.1} s, test {:.1} s",
                    m.records.len(),
                    secs(Split::Train),
                    secs(Split::Valid),
                    secs(Split::Test)
                ),
                artifacts: vec![out.join(MANIFEST_FILE), echo],
            })
        }
        Command::Train {
            common,
            manifest,
            run,
            epochs,
            layers,
            hidden,
            embed_dim,
            lr0,
            batch_size,
            threads,
            resume,
            quiet,
        } => {
            let cfg = config(
                &common,
                &[
                    ("data.manifest", p(&manifest)),
                    ("run.dir", p(&run)),
                    ("train.epochs", s(&epochs)),
                    ("model.layers", s(&layers)),
                    ("model.hidden", s(&hidden)),
                    ("model.embed_dim", s(&embed_dim)),
                    ("train.lr0", s(&lr0)),
                    ("train.batch_size", s(&batch_size)),
                    ("train.threads", s(&threads)),
                    ("run.resume", resume.then(|| "true".to_string())),
                ],
            )?;
            let req = TrainRequest {
                manifest: read_manifest(&cfg.existing("data.manifest")?)?,
                run_dir: cfg.path("run.dir")?,
                hyper: cfg.hyper()?,
                arch: cfg.arch()?,
                stft: cfg.stft()?,
                floor_eps: cfg.floor_eps()?,
                resume: cfg.get("run.resume")?,
                no_clock: cfg.get("train.no_clock")?,
            };
            set_threads(&cfg)?;
            let echo = cfg.echo_to(&req.run_dir)?;
            let out = run_training(&req, !quiet)?;
            let summary = match out.log.records.last() {
                Some(r) => format!(
                    "trained to epoch {}: train loss {:.4}, val loss {:.4}, best val {:.4}",
                    r.epoch, r.train_loss, r.val_loss, out.last.best_val_loss
                ),
                None => format!(
                    "nothing to do: checkpoint already at epoch {}",
                    out.last.epoch
                ),
            };
            Ok(CommandOutcome {
                summary,
                artifacts: vec![
                    req.run_dir.join(BEST_FILE),
                    req.run_dir.join(LOG_FILE),
                    echo,
                ],
            })
        }
        Command::Separate {
            common,
            checkpoint,
            input,
            out_dir,
            speakers,
            cluster,
        } => {
            let cfg = config(
                &common,
                &[
                    ("separate.checkpoint", p(&checkpoint)),
                    ("separate.input", p(&input)),
                    ("separate.out_dir", p(&out_dir)),
                    ("separate.speakers", s(&speakers)),
                    ("separate.cluster", cluster.clone()),
                ],
            )?;
            let ck_path = cfg.existing("separate.checkpoint")?;
            let input = cfg.existing("separate.input")?;
            let opts = cfg.separate_options()?;
            let n = cfg.speakers()?;
            let ckpt = load_checkpoint(&ck_path)?;
            let mix = read_wav(&input)?;
            if mix.sample_rate != ckpt.sample_rate {
                return Err(Error::Runtime(format!(
                    "{}: sample rate {} Hz, the model expects {} Hz",
                    input.display(),
                    mix.sample_rate,
                    ckpt.sample_rate
                )));
            }
            let dir = match cfg.raw("separate.out_dir") {
                "" => input.parent().map(PathBuf::from).unwrap_or_default(),
                d => PathBuf::from(d),
            };
            let stem = input
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            let outs = separate(&mix, &ckpt, n, &opts)?;
            let mut artifacts = Vec::new();
            for (i, w) in outs.iter().enumerate() {
                let path = dir.join(format!("{stem}_spk{}.wav", i + 1));
                write_wav(&path, w)?;
                artifacts.push(path);
            }
            Ok(CommandOutcome {
                summary: format!(
                    "wrote {} sources ({} clustering) to {}",
                    outs.len(),
                    opts.algo,
                    dir.display()
                ),
                artifacts,
            })
        }
        Command::Eval {
            common,
            manifest,
            checkpoint,
            split,
            oracle,
            cluster,
            out,
            proj_len,
        } => {
            let cfg = config(
                &common,
                &[
                    ("data.manifest", p(&manifest)),
                    ("eval.checkpoint", p(&checkpoint)),
                    ("eval.split", split.clone()),
                    ("eval.oracle", oracle.clone()),
                    ("separate.cluster", cluster.clone()),
                    ("eval.report", p(&out)),
                    ("eval.proj_len", s(&proj_len)),
                ],
            )?;
            let m = read_manifest(&cfg.existing("data.manifest")?)?;
            let split: Split = cfg.get("eval.split")?;
            let ecfg = cfg.eval()?;
            let stft = cfg.stft()?;
            let ckpt;
            let est = match cfg.raw("eval.oracle") {
                "none" => {
                    ckpt = load_checkpoint(&cfg.existing("eval.checkpoint")?)?;
                    Estimator::Model {
                        ckpt: &ckpt,
                        opts: cfg.separate_options()?,
                    }
                }
                "wfm" => Estimator::Oracle {
                    kind: OracleMask::Wiener,
                    stft,
                },
                "binary" => Estimator::Oracle {
                    kind: OracleMask::Binary,
                    stft,
                },
                "mixture" => Estimator::Mixture,
                other => return Err(Error::usage(format!("eval.oracle: unknown mode {other:?}"))),
            };
            let report = evaluate_set(&m, split, &est, &ecfg)?;
            let path = match cfg.raw("eval.report") {
                "" => PathBuf::from(format!("report_{}.csv", split.as_str())),
                r => PathBuf::from(r),
            };
            if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
            std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
            let summary = match report.mean() {
                Some(mu) => format!(
                    "{} rows; mean SDR {:.2} dB, SIR {:.2} dB, SAR {:.2} dB",
                    report.rows.len(),
                    mu.sdr,
                    mu.sir,
                    mu.sar
                ),
                None => format!("no mixtures in the {} split", split.as_str()),
            };
            Ok(CommandOutcome {
                summary,
                artifacts: vec![path],
            })
        }
        Command::CountParams {
            cell,
            layers,
            hidden,
            embed_dim,
            input_dim,
        } => {
            let cell = parse_cell(&cell)
                .ok_or_else(|| Error::usage(format!("--cell: unknown cell {cell:?}")))?;
            let arch = ArchSpec {
                input_dim,
                num_layers: layers,
                hidden,
                embed_dim,
                cell,
            };
            Ok(CommandOutcome {
                summary: count_params(&arch).to_string(),
                artifacts: vec![],
            })
        }
        Command::Gradcheck { seed, step } => {
            if !(step > 0.0) {
                return Err(Error::usage("--step must be positive"));
            }
            let report = check(&tiny_problem(seed), step)?;
            for t in &report.tensors {
                println!(
                    "{:<16} {:>4} entries  max rel error {:.3e}",
                    t.name, t.entries, t.max_rel_error
                );
            }
            if report.max_rel_error >= 1e-4 {
                return Err(Error::Runtime(format!(
                    "gradient check failed: max relative error {:.3e}",
                    report.max_rel_error
                )));
            }
            Ok(CommandOutcome {
                summary: format!("max relative error {:.3e}", report.max_rel_error),
                artifacts: vec![],
            })
        }
        Command::Keys => Ok(CommandOutcome {
            summary: KEYS
                .iter()
                .map(|(k, v, d)| format!("{k:<24} {:<8} {d}", if v.is_empty() { "-" } else { v }))
                .collect::<Vec<_>>()
                .join("\n"),
            artifacts: vec![],
        }),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(out) => {
            println!("{}", out.summary);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
