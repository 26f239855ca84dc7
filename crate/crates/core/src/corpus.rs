//! Two-speaker mixture recipes and a synthetic stand-in corpus.
//!
//! Everything here is a pure function of its inputs and seeds; writing files
//! is left to the caller.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;
use crate::math::{cos, log, pow, rms, sin, sqrt, PI};
use crate::{Error, Result};

pub const CORPUS_RATE: u32 = 8_000;

/// Peak above which a rendered mixture (and its stems) is rescaled to 0.9.
pub const CLIP_GUARD: f64 = 0.99;

#[derive(Debug, Clone)]
pub struct Mixture {
    pub mixture: Waveform,
    /// First source after any peak normalization.
    pub source_a: Waveform,
    /// Second source after the SNR gain and any peak normalization.
    pub source_b: Waveform,
    /// Gain applied to the second source to reach the requested SNR.
    pub gain: f64,
    /// Common scale applied to everything to avoid clipping (1 if none).
    pub scale: f64,
}

/// Mixes two utterances at `snr_db` (first over second), cropped to the
/// shorter one.
pub fn make_mixture(a: &Waveform, b: &Waveform, snr_db: f64) -> Result<Mixture> {
    if a.sample_rate != b.sample_rate {
        return Err(Error::invalid(format!(
            "sample rates differ: {} vs {}",
            a.sample_rate, b.sample_rate
        )));
    }
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(Error::Empty("utterance"));
    }
    let (xa, xb) = (&a.samples[..n], &b.samples[..n]);
    let (ra, rb) = (rms(xa), rms(xb));
    if ra == 0.0 || rb == 0.0 {
        return Err(Error::invalid("cannot mix a zero-energy utterance"));
    }
    let gain = ra / (rb * pow(10.0, snr_db / 20.0));
    let mut sa: Vec<f64> = xa.to_vec();
    let mut sb: Vec<f64> = xb.iter().map(|v| v * gain).collect();
    let mut mix: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| x + y).collect();
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > CLIP_GUARD { 0.9 / peak } else { 1.0 };
    if scale != 1.0 {
        for v in sa.iter_mut().chain(sb.iter_mut()) {
            *v *= scale;
        }
        mix = sa.iter().zip(&sb).map(|(x, y)| x + y).collect();
    }
    let rate = a.sample_rate;
    Ok(Mixture {
        mixture: Waveform::new(mix, rate)?,
        source_a: Waveform::new(sa, rate)?,
        source_b: Waveform::new(sb, rate)?,
        gain,
        scale,
    })
}

/// `20·log10(rms(a) / rms(b))`
pub fn measured_snr_db(a: &[f64], b: &[f64]) -> f64 {
    20.0 * crate::math::log10(rms(a) / rms(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl core::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    /// Target mixture duration per split in seconds (train, valid, test).
    pub targets_secs: [f64; 3],
    pub snr_range_db: (f64, f64),
    pub seed: u64,
}

impl Recipe {
    /// 6 / 2 / 2 minutes.
    pub fn desk(seed: u64) -> Self {
        Self {
            targets_secs: [360.0, 120.0, 120.0],
            snr_range_db: (-3.0, 3.0),
            seed,
        }
    }
}

/// Allowed relative deviation of a split's total duration from its target.
pub const DURATION_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UttInfo {
    pub speaker: usize,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedMixture {
    pub split: Split,
    /// Indices into the utterance list.
    pub utt_a: usize,
    pub utt_b: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub duration_secs: f64,
}

/// Seeded pairing of utterances from distinct speakers into splits.
///
/// Each speaker's utterances are dealt into per-split pools in proportion to
/// the split targets, so no utterance appears in two splits, and no
/// utterance is used twice within a split. Mixtures are added until a split
/// reaches its target within [`DURATION_TOLERANCE`]; a mixture that would
/// overshoot is trimmed to the remaining gap and closes the split.
pub fn plan_dataset(utts: &[UttInfo], recipe: &Recipe) -> Result<Vec<PlannedMixture>> {
    let (lo, hi) = recipe.snr_range_db;
    if !(lo <= hi) {
        return Err(Error::invalid(format!("empty SNR range [{lo}, {hi}]")));
    }
    if recipe.targets_secs.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::invalid("split targets must be nonnegative"));
    }
    let n_speakers = utts.iter().map(|u| u.speaker + 1).max().unwrap_or(0);
    if n_speakers < 2 {
        return Err(Error::invalid("mixing needs at least two speakers"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let total_target: f64 = recipe.targets_secs.iter().sum();
    let mut pools: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for s in 0..n_speakers {
        let mut mine: Vec<usize> = (0..utts.len()).filter(|&i| utts[i].speaker == s).collect();
        mine.shuffle(&mut rng);
        let own: f64 = mine.iter().map(|&i| utts[i].duration_secs).sum();
        let mut acc = 0.0;
        let mut split = 0;
        let mut bound = own * recipe.targets_secs[0] / total_target.max(1e-300);
        for i in mine {
            while split < 2 && acc >= bound {
                split += 1;
                bound += own * recipe.targets_secs[split] / total_target;
            }
            pools[split].push(i);
            acc += utts[i].duration_secs;
        }
    }
    let mut shortfall = String::new();
    for split in Split::ALL {
        let avail: f64 = pools[split.index()]
            .iter()
            .map(|&i| utts[i].duration_secs)
            .sum::<f64>()
            / 2.0;
        let want = recipe.targets_secs[split.index()];
        if want > avail {
            shortfall.push_str(&format!(
                " {}: need {want:.1}s, at most {avail:.1}s;",
                split.as_str()
            ));
        }
    }
    if !shortfall.is_empty() {
        return Err(Error::invalid(format!("insufficient material:{shortfall}")));
    }

    let mut plan = Vec::new();
    for split in Split::ALL {
        let target = recipe.targets_secs[split.index()];
        let mut unused = pools[split.index()].clone();
        let mut acc = 0.0;
        while acc < target * (1.0 - DURATION_TOLERANCE) {
            if unused.len() < 2 {
                return Err(Error::invalid(format!(
                    "insufficient material: {} reached {acc:.1}s of {target:.1}s",
                    split.as_str()
                )));
            }
            let ia = rng.gen_range(0..unused.len());
            let a = unused[ia];
            let partners: Vec<usize> = (0..unused.len())
                .filter(|&j| utts[unused[j]].speaker != utts[a].speaker)
                .collect();
            if partners.is_empty() {
                unused.swap_remove(ia);
                continue;
            }
            let ib = partners[rng.gen_range(0..partners.len())];
            let b = unused[ib];
            // a pair that would overshoot closes the split, trimmed to the gap
            let dur = utts[a]
                .duration_secs
                .min(utts[b].duration_secs)
                .min(target - acc);
            let snr_db = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let seed = rng.gen();
            plan.push(PlannedMixture {
                split,
                utt_a: a,
                utt_b: b,
                snr_db,
                seed,
                duration_secs: dur,
            });
            acc += dur;
            // remove the higher index first so the other stays valid
            let (x, y) = if ia > ib { (ia, ib) } else { (ib, ia) };
            unused.swap_remove(x);
            unused.swap_remove(y);
        }
    }
    Ok(plan)
}

/// A synthetic talker: a fixed fundamental, formant-like spectral envelope,
/// syllable-rate amplitude modulation and a breath-noise component.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpeaker {
    pub id: usize,
    pub f0: f64,
    /// (centre Hz, bandwidth Hz, gain)
    pub formants: [(f64, f64, f64); 3],
    /// Spectral slope exponent applied as `(f / 1 kHz)^tilt`.
    pub tilt: f64,
    pub noise_level: f64,
    pub vibrato_hz: f64,
    seed: u64,
}

fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Speakers with fundamentals spread over 90–250 Hz.
pub fn synth_speakers(n_speakers: usize, seed: u64) -> Result<Vec<SynthSpeaker>> {
    if n_speakers < 2 {
        return Err(Error::invalid(
            "a synthetic corpus needs at least two speakers",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_speakers as f64;
    let mut perm = || {
        let mut p: Vec<usize> = (0..n_speakers).collect();
        p.shuffle(&mut rng);
        p
    };
    // Independent permutations stratify F0, formant and tilt positions.
    let (p0, p1, p2, p3) = (perm(), perm(), perm(), perm());
    let mut at = |slot: usize, lo: f64, hi: f64| {
        lo + (hi - lo) * (slot as f64 + rng.gen_range(0.2..0.8)) / n
    };
    let params: Vec<_> = (0..n_speakers)
        .map(|id| {
            (
                at(p0[id], 90.0, 250.0),
                at(p1[id], 300.0, 900.0),
                at(p2[id], 1000.0, 2400.0),
                at(p3[id], -1.5, 0.5),
            )
        })
        .collect();
    Ok(params
        .into_iter()
        .enumerate()
        .map(|(id, (f0, f1, f2, tilt))| {
            let formants = [
                (f1, rng.gen_range(70.0..130.0), 1.0),
                (f2, rng.gen_range(90.0..180.0), rng.gen_range(0.4..0.9)),
                (
                    rng.gen_range(2500.0..3600.0),
                    rng.gen_range(150.0..300.0),
                    rng.gen_range(0.15..0.5),
                ),
            ];
            SynthSpeaker {
                id,
                f0,
                formants,
                tilt,
                noise_level: rng.gen_range(0.05..0.2),
                vibrato_hz: rng.gen_range(4.0..6.5),
                seed: mix_seed(seed, id as u64 + 1),
            }
        })
        .collect())
}

impl SynthSpeaker {
    fn envelope(&self, f: f64) -> f64 {
        let slope = pow(f.max(50.0) / 1000.0, self.tilt);
        slope
            * (0.02
                + self
                    .formants
                    .iter()
                    .map(|&(c, bw, g)| {
                        let x = (f - c) / bw;
                        g / (1.0 + x * x)
                    })
                    .sum::<f64>())
    }

    /// Utterance `index`, its length drawn within ±20 % of `mean_secs`.
    pub fn utterance(&self, index: usize, mean_secs: f64) -> Waveform {
        let rate = CORPUS_RATE as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, index as u64));
        let secs = mean_secs * rng.gen_range(0.8..1.2);
        let n = ((secs * rate) as usize).max(1);

        // Syllables: voiced stretches with raised-cosine envelopes and gaps.
        let mut env = vec![0.0; n];
        let mut t = (rng.gen_range(0.02..0.1) * rate) as usize;
        while t < n {
            let len = (rng.gen_range(0.12..0.32) * rate) as usize;
            let amp = rng.gen_range(0.5..1.0);
            for i in 0..len.min(n - t) {
                env[t + i] = amp * (0.5 - 0.5 * cos(2.0 * PI * i as f64 / len as f64));
            }
            t += len + (rng.gen_range(0.03..0.18) * rate) as usize;
        }

        let harmonics = (3800.0 / (self.f0 * 1.1)) as usize;
        let mut phases: Vec<f64> = (0..harmonics)
            .map(|_| rng.gen_range(0.0..2.0 * PI))
            .collect();
        let vib_phase = rng.gen_range(0.0..2.0 * PI);
        let drift_phase = rng.gen_range(0.0..2.0 * PI);
        let drift_rate = rng.gen_range(0.3..0.8);

        // Breath noise through a resonator at the first formant.
        let (fc, bw, _) = self.formants[0];
        let r = crate::math::exp(-PI * bw / rate);
        let (a1, a2) = (-2.0 * r * cos(2.0 * PI * fc / rate), r * r);
        let (mut y1, mut y2) = (0.0, 0.0);

        let mut out = vec![0.0; n];
        for i in 0..n {
            let time = i as f64 / rate;
            let f0 = self.f0
                * (1.0 + 0.01 * sin(2.0 * PI * self.vibrato_hz * time + vib_phase))
                * (1.0 + 0.02 * sin(2.0 * PI * drift_rate * time + drift_phase));
            let mut v = 0.0;
            for (h, ph) in phases.iter_mut().enumerate() {
                let f = f0 * (h + 1) as f64;
                *ph += 2.0 * PI * f / rate;
                if *ph > 2.0 * PI {
                    *ph -= 2.0 * PI;
                }
                if f < 3900.0 {
                    v += self.envelope(f) * sin(*ph);
                }
            }
            let w: f64 = rng.gen_range(-1.0..1.0);
            let y = w - a1 * y1 - a2 * y2;
            y2 = y1;
            y1 = y;
            out[i] = env[i] * (v + self.noise_level * (1.0 - r) * y * 8.0);
        }
        let level = rms(&out);
        if level > 0.0 {
            let target = 0.08 * rng.gen_range(0.7..1.3);
            for v in &mut out {
                *v *= target / level;
            }
        }
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.99 {
            for v in &mut out {
                *v *= 0.99 / peak;
            }
        }
        Waveform::new(out, CORPUS_RATE).expect("finite synthesis")
    }
}

/// Pearson correlation of two long-term power spectra given in dB.
pub fn spectral_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / sqrt(saa * sbb)
}

/// Long-term power spectrum in dB (mean over STFT frames).
pub fn long_term_spectrum_db(w: &Waveform) -> Result<Vec<f64>> {
    let cfg = crate::dsp::StftConfig::default();
    let spec = crate::dsp::stft(w, &cfg)?;
    let frames = spec.num_frames() as f64;
    Ok((0..spec.num_bins())
        .map(|f| {
            let p: f64 = (0..spec.num_frames())
                .map(|t| spec.bins.get(f, t).norm_sqr())
                .sum::<f64>()
                / frames;
            10.0 * log(p.max(1e-20)) / core::f64::consts::LN_10
        })
        .collect())
}
