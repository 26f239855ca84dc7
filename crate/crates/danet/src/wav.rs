//! Mono PCM WAV in and out. Integer samples are scaled by `1 / 2^(bits-1)`.

use std::path::Path;

use danet_core::dsp::Waveform;
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            path,
            format!("expected mono audio, found {} channels", spec.channels),
        ));
    }
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
    };
    Ok(Waveform::new(samples, spec.sample_rate)?)
}

pub fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn dequantize(q: i16) -> f64 {
    q as f64 / 32768.0
}

pub fn write_pcm16(path: &Path, samples: &[i16], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        w.write_sample(s).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

/// Writes 16-bit PCM, clamping to full scale.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let q: Vec<i16> = wave.samples.iter().map(|&x| quantize(x)).collect();
    write_pcm16(path, &q, wave.sample_rate)
}

/// Channel count, sample rate and duration from the header alone.
pub fn probe(path: &Path) -> Result<(u16, u32, f64)> {
    let r = WavReader::open(path).map_err(|source| Error::Wav {
        path: path.to_path_buf(),
        source,
    })?;
    let s = r.spec();
    Ok((
        s.channels,
        s.sample_rate,
        r.duration() as f64 / s.sample_rate as f64,
    ))
}
