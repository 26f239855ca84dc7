//! Signal path: sqrt-Hann STFT/ISTFT, polar views, log-magnitude features and
//! 2:1 decimation.
//!
//! Framing: frame `t` covers samples `[t·hop − (win_len − hop), t·hop + hop)`.
//! The leading `win_len − hop` samples and the tail are zero padding, so every
//! real sample lies under exactly `win_len / hop` frames and weighted
//! overlap-add with the same window inverts the transform.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::fft::Fft;
use crate::math::{atan2, cos, log, sin, sqrt, PI};
use crate::tf::{RealTf, TfMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if !crate::math::all_finite(&samples) {
            return Err(Error::NonFinite("waveform samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftConfig {
    /// 32 ms window with 75 % overlap at 8 kHz.
    fn default() -> Self {
        Self {
            win_len: 256,
            hop: 64,
            fft_size: 256,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.win_len < 2 || !self.win_len.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "win_len must be even and >= 2, got {}",
                self.win_len
            )));
        }
        if self.hop == 0 || !self.win_len.is_multiple_of(self.hop) {
            return Err(Error::invalid(format!(
                "hop {} must divide win_len {}",
                self.hop, self.win_len
            )));
        }
        if self.fft_size < self.win_len || !self.fft_size.is_power_of_two() {
            return Err(Error::invalid(format!(
                "fft_size {} must be a power of two >= win_len {}",
                self.fft_size, self.win_len
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames needed to cover `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        if len == 0 {
            return 0;
        }
        (len - 1 + self.win_len - self.hop) / self.hop + 1
    }

    fn lead(&self) -> usize {
        self.win_len - self.hop
    }
}

/// Periodic square-root Hann window, `w[n] = sqrt(0.5 − 0.5·cos(2πn/N))`.
pub fn make_sqrt_hann(win_len: usize) -> Result<Vec<f64>> {
    if win_len < 2 || !win_len.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "window length must be even and >= 2, got {win_len}"
        )));
    }
    Ok((0..win_len)
        .map(|n| {
            let v = 0.5 - 0.5 * cos(2.0 * PI * n as f64 / win_len as f64);
            sqrt(v.max(0.0))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub bins: TfMatrix<Complex64>,
    /// Length of the analysed signal, used to trim the inverse transform.
    pub source_len: usize,
}

impl ComplexSpectrogram {
    pub fn num_bins(&self) -> usize {
        self.bins.bins()
    }

    pub fn num_frames(&self) -> usize {
        self.bins.frames()
    }
}

pub fn stft(wave: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if wave.is_empty() {
        return Err(Error::Empty("waveform"));
    }
    let window = make_sqrt_hann(cfg.win_len)?;
    let fft = Fft::new(cfg.fft_size)?;
    let n = wave.len();
    let frames = cfg.frames_for(n);
    let nb = cfg.bins();
    let mut out = TfMatrix::<Complex64>::zeros(nb, frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for t in 0..frames {
        buf.fill(Complex64::new(0.0, 0.0));
        let start = (t * cfg.hop) as isize - cfg.lead() as isize;
        for (i, w) in window.iter().enumerate() {
            let idx = start + i as isize;
            if idx >= 0 && (idx as usize) < n {
                buf[i].re = wave.samples[idx as usize] * w;
            }
        }
        fft.forward(&mut buf);
        out.frame_mut(t).copy_from_slice(&buf[..nb]);
    }
    Ok(ComplexSpectrogram {
        bins: out,
        source_len: n,
    })
}

/// Weighted overlap-add inverse with the analysis window as synthesis window,
/// normalized by the summed squared window.
pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig, sample_rate: u32) -> Result<Waveform> {
    cfg.validate()?;
    let nb = cfg.bins();
    if spec.num_bins() != nb {
        return Err(Error::shape(format!(
            "spectrogram has {} bins, config expects {nb}",
            spec.num_bins()
        )));
    }
    let frames = spec.num_frames();
    if frames != cfg.frames_for(spec.source_len) {
        return Err(Error::shape(format!(
            "{frames} frames cannot come from {} samples at hop {}",
            spec.source_len, cfg.hop
        )));
    }
    let window = make_sqrt_hann(cfg.win_len)?;
    let fft = Fft::new(cfg.fft_size)?;
    let n = spec.source_len;
    let padded = frames * cfg.hop + cfg.lead();
    let mut acc = vec![0.0; padded];
    let mut norm = vec![0.0; padded];
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    let nfft = cfg.fft_size;
    for t in 0..frames {
        let frame = spec.bins.frame(t);
        buf[..nb].copy_from_slice(frame);
        for k in nb..nfft {
            buf[k] = frame[nfft - k].conj();
        }
        // A real signal has real DC and Nyquist bins.
        buf[0].im = 0.0;
        buf[nfft / 2].im = 0.0;
        fft.inverse(&mut buf);
        let start = t * cfg.hop;
        for (i, w) in window.iter().enumerate() {
            acc[start + i] += buf[i].re * w;
            norm[start + i] += w * w;
        }
    }
    let lead = cfg.lead();
    let samples = (0..n)
        .map(|i| {
            let d = norm[i + lead];
            if d > 1e-10 {
                acc[i + lead] / d
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(samples, sample_rate)
}

pub fn magnitude(spec: &ComplexSpectrogram) -> RealTf {
    spec.bins.map(|c| c.norm())
}

/// Phase in `(−π, π]`; zero bins have phase 0.
pub fn phase(spec: &ComplexSpectrogram) -> RealTf {
    spec.bins.map(|c| {
        if c.re == 0.0 && c.im == 0.0 {
            return 0.0;
        }
        let p = atan2(c.im, c.re);
        if p <= -PI {
            PI
        } else {
            p
        }
    })
}

pub fn polar(mag: &RealTf, phase: &RealTf) -> Result<TfMatrix<Complex64>> {
    mag.check_same_shape(phase, "polar")?;
    Ok(TfMatrix::from_frame_major(
        mag.bins(),
        mag.frames(),
        mag.as_slice()
            .iter()
            .zip(phase.as_slice())
            .map(|(&m, &p)| Complex64::from_polar(m, p))
            .collect(),
    )
    .expect("shape checked"))
}

pub const DEFAULT_FLOOR_EPS: f64 = 1e-7;

/// Per-frequency standardization statistics for log-magnitude features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn identity(bins: usize) -> Self {
        Self {
            mean: vec![0.0; bins],
            std: vec![1.0; bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.mean.len()
    }

    /// Mean and (population) standard deviation of each frequency row over
    /// every frame of every matrix. Rows with no spread keep unit scale.
    pub fn fit<'a>(log_mags: impl IntoIterator<Item = &'a RealTf>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let mats: Vec<&RealTf> = log_mags.into_iter().collect();
        for m in &mats {
            if sum.is_empty() {
                sum = vec![0.0; m.bins()];
                sq = vec![0.0; m.bins()];
            }
            if m.bins() != sum.len() {
                return Err(Error::shape("feature matrices differ in bin count"));
            }
            for t in 0..m.frames() {
                for (f, &v) in m.frame(t).iter().enumerate() {
                    sum[f] += v;
                }
            }
            count += m.frames();
        }
        if count == 0 {
            return Err(Error::Empty("feature statistics input"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        for m in &mats {
            for t in 0..m.frames() {
                for (f, &v) in m.frame(t).iter().enumerate() {
                    let d = v - mean[f];
                    sq[f] += d * d;
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = sqrt(s / count as f64);
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }
}

/// Network input: standardized log-magnitude features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: RealTf,
    pub floor_eps: f64,
}

/// `ln(max(mag, eps))` without standardization.
pub fn log_magnitude(mag: &RealTf, floor_eps: f64) -> Result<RealTf> {
    if !(floor_eps > 0.0) {
        return Err(Error::invalid(format!(
            "floor_eps must be positive, got {floor_eps}"
        )));
    }
    Ok(mag.map(|m| log(m.max(floor_eps))))
}

pub fn log_features(mag: &RealTf, floor_eps: f64, stats: &FeatureStats) -> Result<FeatureMatrix> {
    let mut values = log_magnitude(mag, floor_eps)?;
    if stats.bins() != values.bins() {
        return Err(Error::shape(format!(
            "statistics for {} bins, features have {}",
            stats.bins(),
            values.bins()
        )));
    }
    for t in 0..values.frames() {
        for (f, v) in values.frame_mut(t).iter_mut().enumerate() {
            *v = (*v - stats.mean[f]) / stats.std[f];
        }
    }
    Ok(FeatureMatrix { values, floor_eps })
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Linear-phase Kaiser-windowed sinc low-pass with unit DC gain.
/// `cutoff` is in cycles per sample (0.5 = Nyquist); `taps` must be odd.
pub fn kaiser_lowpass(taps: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    assert!(
        taps % 2 == 1,
        "odd tap count keeps the group delay integral"
    );
    let m = (taps - 1) as f64;
    let denom = bessel_i0(beta);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let x = n as f64 - m / 2.0;
            let sinc = if x == 0.0 {
                2.0 * cutoff
            } else {
                sin(2.0 * PI * cutoff * x) / (PI * x)
            };
            let r = 2.0 * n as f64 / m - 1.0;
            sinc * bessel_i0(beta * sqrt((1.0 - r * r).max(0.0))) / denom
        })
        .collect();
    let s: f64 = h.iter().sum();
    for v in &mut h {
        *v /= s;
    }
    h
}

pub const DECIMATE_TAPS: usize = 95;
/// Kaiser beta for roughly 70 dB of stopband attenuation.
pub const DECIMATE_BETA: f64 = 6.76;

/// Anti-aliasing filter used by [`decimate2`]: cutoff at 0.45 of the output
/// rate (3.6 kHz for 16 kHz → 8 kHz).
pub fn decimation_filter() -> Vec<f64> {
    kaiser_lowpass(DECIMATE_TAPS, 0.225, DECIMATE_BETA)
}

/// 16 kHz → 8 kHz. The filter's group delay is removed, so output sample `m`
/// is aligned with input sample `2m`.
pub fn decimate2(wave: &Waveform) -> Result<Waveform> {
    if wave.sample_rate != 16_000 {
        return Err(Error::invalid(format!(
            "decimate2 expects 16000 Hz input, got {}",
            wave.sample_rate
        )));
    }
    let h = decimation_filter();
    let delay = (h.len() - 1) / 2;
    let x = &wave.samples;
    let n = x.len();
    let out_len = n.div_ceil(2);
    let samples = (0..out_len)
        .map(|m| {
            let center = 2 * m + delay;
            h.iter()
                .enumerate()
                .filter_map(|(k, hk)| {
                    let idx = center as isize - k as isize;
                    (idx >= 0 && (idx as usize) < n).then(|| hk * x[idx as usize])
                })
                .sum()
        })
        .collect();
    Waveform::new(samples, 8_000)
}

/// Magnitude of the filter's frequency response at `freq` cycles/sample.
pub fn fir_response(h: &[f64], freq: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (k, hk) in h.iter().enumerate() {
        let a = -2.0 * PI * freq * k as f64;
        re += hk * cos(a);
        im += hk * sin(a);
    }
    sqrt(re * re + im * im)
}
