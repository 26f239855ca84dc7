//! Corpus directories, dataset builds and manifests.
//!
//! A corpus is `root/<speaker>/<utterance>.wav`. A built dataset holds
//! `manifest.jsonl` (a header line, then one [`MixtureRecord`] per line) and
//! `<split>/<id>_{mix,s1,s2}.wav`. Stems are stored as 16-bit PCM and the
//! stored mixture is their exact integer sum.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use danet_core::corpus::{self, plan_dataset, Recipe, Split, SynthSpeaker, UttInfo, CORPUS_RATE};
use danet_core::dsp::{decimate2, Waveform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wav::{quantize, read_wav, write_pcm16, write_wav};

pub const RECIPE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub path: PathBuf,
    pub duration_secs: f64,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Speaker {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpeakerTable {
    pub speakers: Vec<Speaker>,
    /// Files that were found but not usable, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl SpeakerTable {
    pub fn utterance_count(&self) -> usize {
        self.speakers.iter().map(|s| s.utterances.len()).sum()
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    v.sort();
    Ok(v)
}

pub fn scan_corpus(root: &Path) -> Result<SpeakerTable> {
    let mut table = SpeakerTable::default();
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let id = dir.file_name().unwrap().to_string_lossy().into_owned();
        let mut utterances = Vec::new();
        for f in sorted_entries(&dir)? {
            let is_wav = f.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
            if !is_wav || !f.is_file() {
                continue;
            }
            match crate::wav::probe(&f) {
                Ok((1, rate, secs)) if secs > 0.0 => utterances.push(Utterance {
                    path: f,
                    duration_secs: secs,
                    sample_rate: rate,
                }),
                Ok((1, _, _)) => table.skipped.push((f, "empty file".into())),
                Ok((ch, _, _)) => table
                    .skipped
                    .push((f, format!("{ch} channels, expected mono"))),
                Err(e) => table.skipped.push((f, e.to_string())),
            }
        }
        if !utterances.is_empty() {
            table.speakers.push(Speaker { id, utterances });
        }
    }
    if table.speakers.is_empty() {
        return Err(Error::Runtime(format!(
            "no speakers found under {}",
            root.display()
        )));
    }
    Ok(table)
}

/// Reads an utterance at 8 kHz, decimating 16 kHz material.
pub fn load_8k(path: &Path) -> Result<Waveform> {
    let w = read_wav(path)?;
    match w.sample_rate {
        CORPUS_RATE => Ok(w),
        16_000 => Ok(decimate2(&w)?),
        r => Err(Error::format(
            path,
            format!("unsupported sample rate {r} Hz (need 8 or 16 kHz)"),
        )),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    pub f0_hz: f64,
    pub formants: Vec<[f64; 3]>,
    pub tilt: f64,
}

/// Writes `n_speakers × utts_per_speaker` synthetic utterances and a
/// `speakers.json` describing each voice.
pub fn synth_corpus(
    out: &Path,
    n_speakers: usize,
    utts_per_speaker: usize,
    mean_secs: f64,
    seed: u64,
) -> Result<()> {
    if utts_per_speaker == 0 || !(mean_secs > 0.0) {
        return Err(Error::usage(
            "synth needs at least one utterance per speaker and a positive duration",
        ));
    }
    let speakers = corpus::synth_speakers(n_speakers, seed)?;
    let jobs: Vec<(&SynthSpeaker, usize)> = speakers
        .iter()
        .flat_map(|s| (0..utts_per_speaker).map(move |u| (s, u)))
        .collect();
    jobs.par_iter().try_for_each(|&(s, u)| {
        let path = out.join(speaker_name(s.id)).join(format!("utt{u:03}.wav"));
        write_wav(&path, &s.utterance(u, mean_secs))
    })?;
    let profiles: Vec<SpeakerProfile> = speakers
        .iter()
        .map(|s| SpeakerProfile {
            id: speaker_name(s.id),
            f0_hz: s.f0,
            formants: s.formants.iter().map(|&(c, b, g)| [c, b, g]).collect(),
            tilt: s.tilt,
        })
        .collect();
    let path = out.join("speakers.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(&profiles).unwrap() + "\n",
    )
    .map_err(|e| Error::io(&path, e))
}

pub fn speaker_name(i: usize) -> String {
    format!("spk{i:02}")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestHeader {
    pub recipe_version: u32,
    pub seed: u64,
    pub targets_secs: [f64; 3],
    pub snr_range_db: [f64; 2],
}

/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MixtureRecord {
    pub id: String,
    pub split: String,
    pub mixture: PathBuf,
    pub sources: [PathBuf; 2],
    pub speakers: [String; 2],
    pub snr_db: f64,
    /// Gain applied to the second source before any peak normalization.
    pub gain: f64,
    /// Common scale applied to avoid clipping (1 when none was needed).
    pub scale: f64,
    pub seed: u64,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<MixtureRecord>,
    /// Directory the record paths are relative to.
    pub root: PathBuf,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &MixtureRecord> {
        self.records
            .iter()
            .filter(move |r| r.split == split.as_str())
    }

    pub fn path(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string(&m.header).unwrap();
    text.push('\n');
    for r in &m.records {
        text.push_str(&serde_json::to_string(r).unwrap());
        text.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Accepts either the manifest file or the dataset directory holding it.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::format(&file, "empty manifest"))?;
    let header: ManifestHeader =
        serde_json::from_str(first).map_err(|e| Error::format(&file, format!("header: {e}")))?;
    if header.recipe_version != RECIPE_VERSION {
        return Err(Error::format(
            &file,
            format!("unsupported recipe version {}", header.recipe_version),
        ));
    }
    let records = lines
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::format(&file, format!("line {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<MixtureRecord>>>()?;
    for r in &records {
        r.split
            .parse::<Split>()
            .map_err(|e| Error::format(&file, format!("{}: {e}", r.id)))?;
    }
    Ok(Manifest {
        header,
        records,
        root: file.parent().unwrap_or(Path::new(".")).to_path_buf(),
    })
}

/// Plans, renders and writes a dataset. Output depends only on the table,
/// the recipe and its seed.
pub fn build_dataset(table: &SpeakerTable, recipe: &Recipe, out: &Path) -> Result<Manifest> {
    if table.speakers.len() < 2 {
        return Err(Error::Runtime("mixing needs at least two speakers".into()));
    }
    let flat: Vec<(usize, &Utterance)> = table
        .speakers
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.utterances.iter().map(move |u| (i, u)))
        .collect();
    let infos: Vec<UttInfo> = flat
        .iter()
        .map(|&(s, u)| UttInfo {
            speaker: s,
            duration_secs: u.duration_secs,
        })
        .collect();
    let plan = plan_dataset(&infos, recipe).map_err(|e| Error::Runtime(e.to_string()))?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut counters = [0usize; 3];
    let named: Vec<(String, &corpus::PlannedMixture)> = plan
        .iter()
        .map(|p| {
            let c = &mut counters[p.split.index()];
            *c += 1;
            (format!("{}_{:04}", p.split.as_str(), *c), p)
        })
        .collect();
    let records = named
        .par_iter()
        .map(|(id, p)| {
            let (sa, ua) = flat[p.utt_a];
            let (sb, ub) = flat[p.utt_b];
            // the planner may trim the last mixture of a split
            let n = (p.duration_secs * CORPUS_RATE as f64).round() as usize;
            let crop = |mut w: Waveform| {
                w.samples.truncate(n);
                w
            };
            let m = corpus::make_mixture(
                &crop(load_8k(&ua.path)?),
                &crop(load_8k(&ub.path)?),
                p.snr_db,
            )?;
            let qa: Vec<i16> = m.source_a.samples.iter().map(|&x| quantize(x)).collect();
            let qb: Vec<i16> = m.source_b.samples.iter().map(|&x| quantize(x)).collect();
            let qm = qa
                .iter()
                .zip(&qb)
                .map(|(&a, &b)| {
                    i16::try_from(a as i32 + b as i32)
                        .map_err(|_| Error::Runtime(format!("{id}: mixture exceeds 16-bit range")))
                })
                .collect::<Result<Vec<i16>>>()?;
            let dir = PathBuf::from(p.split.as_str());
            let rel = |suffix: &str| dir.join(format!("{id}_{suffix}.wav"));
            let rate = m.mixture.sample_rate;
            write_pcm16(&out.join(rel("mix")), &qm, rate)?;
            write_pcm16(&out.join(rel("s1")), &qa, rate)?;
            write_pcm16(&out.join(rel("s2")), &qb, rate)?;
            Ok(MixtureRecord {
                id: id.clone(),
                split: p.split.as_str().into(),
                mixture: rel("mix"),
                sources: [rel("s1"), rel("s2")],
                speakers: [table.speakers[sa].id.clone(), table.speakers[sb].id.clone()],
                snr_db: p.snr_db,
                gain: m.gain,
                scale: m.scale,
                seed: p.seed,
                duration_secs: qm.len() as f64 / rate as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        header: ManifestHeader {
            recipe_version: RECIPE_VERSION,
            seed: recipe.seed,
            targets_secs: recipe.targets_secs,
            snr_range_db: [recipe.snr_range_db.0, recipe.snr_range_db.1],
        },
        records,
        root: out.to_path_buf(),
    };
    write_manifest(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct LoadedMixture {
    pub record: MixtureRecord,
    pub mixture: Waveform,
    pub sources: [Waveform; 2],
}

pub fn load_mixture(m: &Manifest, r: &MixtureRecord) -> Result<LoadedMixture> {
    let load = |p: &Path| {
        let path = m.path(p);
        if !path.exists() {
            return Err(Error::Runtime(format!(
                "{}: missing file {}",
                r.id,
                path.display()
            )));
        }
        read_wav(&path)
    };
    Ok(LoadedMixture {
        record: r.clone(),
        mixture: load(&r.mixture)?,
        sources: [load(&r.sources[0])?, load(&r.sources[1])?],
    })
}

pub fn load_split(m: &Manifest, split: Split) -> Result<Vec<LoadedMixture>> {
    let recs: Vec<&MixtureRecord> = m.split(split).collect();
    recs.par_iter().map(|r| load_mixture(m, r)).collect()
}
