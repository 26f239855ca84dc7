//! Scoring a dataset split: per-speaker BSS-eval rows plus means.

use std::fmt::Write as _;

use danet_core::corpus::Split;
use danet_core::dsp::{StftConfig, Waveform};
use danet_core::evalkit::{resolve_permutation, EvalConfig, SourceMetrics};
use danet_core::pipeline::{oracle_separate, separate, Checkpoint, OracleMask, SeparateOptions};
use rayon::prelude::*;

use crate::dataset::{load_mixture, LoadedMixture, Manifest};
use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "utt_id,speaker,permuted_to,sdr_db,sir_db,sar_db";

#[derive(Debug, Clone)]
pub enum Estimator<'a> {
    Model {
        ckpt: &'a Checkpoint,
        opts: SeparateOptions,
    },
    Oracle {
        kind: OracleMask,
        stft: StftConfig,
    },
    /// The unprocessed mixture as every estimate.
    Mixture,
}

impl Estimator<'_> {
    pub fn estimate(&self, m: &LoadedMixture) -> Result<Vec<Waveform>> {
        Ok(match self {
            Estimator::Model { ckpt, opts } => separate(&m.mixture, ckpt, 2, opts)?,
            Estimator::Oracle { kind, stft } => {
                oracle_separate(&m.mixture, &[&m.sources[0], &m.sources[1]], stft, *kind)?
            }
            Estimator::Mixture => vec![m.mixture.clone(), m.mixture.clone()],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub utt_id: String,
    pub speaker: String,
    /// Index of the estimate assigned to this reference.
    pub permuted_to: usize,
    pub metrics: SourceMetrics,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn mean(&self) -> Option<SourceMetrics> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let sum =
            |f: fn(&SourceMetrics) -> f64| self.rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
        Some(SourceMetrics {
            sdr: sum(|m| m.sdr),
            sir: sum(|m| m.sir),
            sar: sum(|m| m.sar),
        })
    }

    /// CSV with a trailing `MEAN` row and a PESQ placeholder row (PESQ is
    /// not computed).
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let m = &r.metrics;
            writeln!(
                s,
                "{},{},{},{:.4},{:.4},{:.4}",
                r.utt_id, r.speaker, r.permuted_to, m.sdr, m.sir, m.sar
            )
            .unwrap();
        }
        if let Some(m) = self.mean() {
            writeln!(s, "MEAN,,,{:.4},{:.4},{:.4}", m.sdr, m.sir, m.sar).unwrap();
            s.push_str("PESQ,n/a,,,,\n");
        }
        s
    }
}

/// Scores every mixture of `split`; rows follow manifest order.
pub fn evaluate_set(
    manifest: &Manifest,
    split: Split,
    est: &Estimator<'_>,
    cfg: &EvalConfig,
) -> Result<Report> {
    let recs: Vec<_> = manifest.split(split).collect();
    let per: Vec<Vec<ReportRow>> = recs
        .par_iter()
        .map(|r| {
            let m = load_mixture(manifest, r)?;
            let ests = est.estimate(&m)?;
            if ests.iter().any(|e| e.len() != m.mixture.len()) {
                return Err(Error::Runtime(format!(
                    "{}: estimate length differs from the mixture",
                    r.id
                )));
            }
            let refs = [&m.sources[0].samples[..], &m.sources[1].samples[..]];
            let e: Vec<&[f64]> = ests.iter().map(|w| &w.samples[..]).collect();
            let metrics = resolve_permutation(&e, &refs, cfg)?;
            let mut rows: Vec<(usize, ReportRow)> = metrics
                .per_speaker
                .iter()
                .enumerate()
                .map(|(i, sm)| {
                    let reference = metrics.permutation[i];
                    let row = ReportRow {
                        utt_id: r.id.clone(),
                        speaker: r.speakers[reference].clone(),
                        permuted_to: i,
                        metrics: *sm,
                    };
                    (reference, row)
                })
                .collect();
            rows.sort_by_key(|(reference, _)| *reference);
            Ok(rows.into_iter().map(|(_, row)| row).collect())
        })
        .collect::<Result<_>>()?;
    Ok(Report {
        rows: per.into_iter().flatten().collect(),
    })
}
