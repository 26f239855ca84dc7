//! Checkpoint files.
//!
//! ```text
//! "DANC"            magic
//! u32 LE            format version
//! u32 LE            header length in bytes
//! header            UTF-8 `key=value` lines
//! f64 LE ...        parameters in layout order (layer, direction, then
//!                   w_in, w_rec, b_in, b_rec with gates z,r,n; then w_fc, b_fc)
//! f64 LE ...        Adam first moments, then second moments, same order
//! f64 LE ...        feature mean, then feature std (one per bin)
//! ```
//!
//! Floats in the header use Rust's shortest round-trip formatting, so a load
//! of a save is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use danet_core::danet::{ArchSpec, CellKind, ModelParams};
use danet_core::dsp::{FeatureStats, StftConfig};
use danet_core::pipeline::{AdamState, Checkpoint, CHECKPOINT_VERSION};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DANC";

pub fn cell_name(c: CellKind) -> &'static str {
    match c {
        CellKind::Gru => "gru",
        CellKind::Lstm => "lstm",
    }
}

pub fn parse_cell(s: &str) -> Option<CellKind> {
    match s {
        "gru" => Some(CellKind::Gru),
        "lstm" => Some(CellKind::Lstm),
        _ => None,
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let a = ck.params.arch();
    let mut h = String::new();
    let mut kv = |k: &str, v: String| writeln!(h, "{k}={v}").unwrap();
    kv("arch.input_dim", a.input_dim.to_string());
    kv("arch.num_layers", a.num_layers.to_string());
    kv("arch.hidden", a.hidden.to_string());
    kv("arch.embed_dim", a.embed_dim.to_string());
    kv("arch.cell", cell_name(a.cell).into());
    kv("stft.win_len", ck.stft.win_len.to_string());
    kv("stft.hop", ck.stft.hop.to_string());
    kv("stft.fft_size", ck.stft.fft_size.to_string());
    kv("floor_eps", ck.floor_eps.to_string());
    kv("sample_rate", ck.sample_rate.to_string());
    kv("epoch", ck.epoch.to_string());
    kv("lr", ck.lr.to_string());
    kv("best_val_loss", ck.best_val_loss.to_string());
    kv("stale_epochs", ck.stale_epochs.to_string());
    kv("adam.t", ck.adam.t.to_string());
    kv("param_count", ck.params.len().to_string());

    let tensors = [
        &ck.params.values,
        &ck.adam.m,
        &ck.adam.v,
        &ck.params.stats.mean,
        &ck.params.stats.std,
    ];
    let floats: usize = tensors.iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(12 + h.len() + 8 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(h.as_bytes());
    for t in tensors {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |msg: String| Error::format(path, msg);
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad(
            "not a checkpoint: bad magic bytes (unrecognized version)".into(),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| bad("truncated header".into()))?;
    let text = std::str::from_utf8(body).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
        map.insert(k, v);
    }
    let cell: String = field(&map, "arch.cell", path)?;
    let arch = ArchSpec {
        input_dim: field(&map, "arch.input_dim", path)?,
        num_layers: field(&map, "arch.num_layers", path)?,
        hidden: field(&map, "arch.hidden", path)?,
        embed_dim: field(&map, "arch.embed_dim", path)?,
        cell: parse_cell(&cell).ok_or_else(|| bad(format!("unknown cell {cell:?}")))?,
    };
    arch.validate()
        .map_err(|e| bad(format!("inconsistent architecture: {e}")))?;
    let stft = StftConfig {
        win_len: field(&map, "stft.win_len", path)?,
        hop: field(&map, "stft.hop", path)?,
        fft_size: field(&map, "stft.fft_size", path)?,
    };
    let n = danet_core::danet::ParamLayout::new(&arch).total;
    let count: usize = field(&map, "param_count", path)?;
    if count != n {
        return Err(bad(format!(
            "header lists {count} parameters, architecture implies {n}"
        )));
    }
    let bins = arch.input_dim;
    let want = 3 * n + 2 * bins;
    let data = &bytes[12 + hlen..];
    if data.len() < want * 8 {
        return Err(bad(format!(
            "truncated: {} tensor bytes, expected {}",
            data.len(),
            want * 8
        )));
    }
    if data.len() > want * 8 {
        return Err(bad(format!(
            "{} trailing bytes after tensors",
            data.len() - want * 8
        )));
    }
    let mut floats = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |k: usize| -> Vec<f64> { floats.by_ref().take(k).collect() };
    let values = take(n);
    let m = take(n);
    let v = take(n);
    let stats = FeatureStats {
        mean: take(bins),
        std: take(bins),
    };
    let params = ModelParams::from_values(arch, values, stats).map_err(|e| bad(e.to_string()))?;
    let ck = Checkpoint {
        params,
        adam: AdamState {
            m,
            v,
            t: field(&map, "adam.t", path)?,
        },
        stft,
        floor_eps: field(&map, "floor_eps", path)?,
        sample_rate: field(&map, "sample_rate", path)?,
        epoch: field(&map, "epoch", path)?,
        best_val_loss: field(&map, "best_val_loss", path)?,
        lr: field(&map, "lr", path)?,
        stale_epochs: field(&map, "stale_epochs", path)?,
    };
    ck.validate().map_err(|e| bad(e.to_string()))?;
    Ok(ck)
}

fn field<T: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str, path: &Path) -> Result<T> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::format(path, format!("header is missing {key}")))?;
    raw.parse()
        .map_err(|_| Error::format(path, format!("bad value {raw:?} for {key}")))
}

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, encode(ck)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
