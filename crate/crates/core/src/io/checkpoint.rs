//! Self-describing training checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DPRC" | version u32 | section count u32 | sections...
//! section: name len u16 | name | kind u8 | payload len u64 | crc32 u32 | payload
//! ```
//!
//! Kinds: 0 UTF-8 JSON, 1 `f32` array, 2 `u64` array, 3 `f64` array.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::autodiff::{AdamState, Tensor};
use crate::congeal::{CongealConfig, EpochStats};
use crate::error::{Error, Result};
use crate::models::{ModelState, NetworkSpec};

const MAGIC: &[u8; 4] = b"DPRC";
pub const VERSION: u32 = 1;

const JSON: u8 = 0;
const F32: u8 = 1;
const U64: u8 = 2;
const F64: u8 = 3;

/// Training progress needed to resume a run exactly. The shuffling stream of
/// every epoch is derived from `seed` and the epoch number, so this fully
/// determines the generator state.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub seed: u64,
    pub epochs_done: usize,
    pub history: Vec<EpochStats>,
    pub best_probe: f64,
    pub since_best: usize,
    pub stopped: bool,
}

impl Progress {
    pub fn new(seed: u64) -> Self {
        Progress {
            seed,
            epochs_done: 0,
            history: Vec::new(),
            best_probe: f64::NEG_INFINITY,
            since_best: 0,
            stopped: false,
        }
    }

    /// Appends an epoch and updates the early-stopping state.
    pub fn record(&mut self, stats: EpochStats, patience: usize) {
        if stats.probe_apsnr > self.best_probe {
            self.best_probe = stats.probe_apsnr;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.history.push(stats);
        self.epochs_done += 1;
        if patience > 0 && self.since_best >= patience {
            self.stopped = true;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: CongealConfig,
    pub model: ModelState,
    pub reference: Tensor<f32>,
    pub progress: Progress,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.config, &self.model, &self.reference, &self.progress)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let sections = parse_sections(bytes)?;
        let get = |name: &str| {
            sections
                .get(name)
                .ok_or_else(|| Error::malformed("checkpoint", format!("missing section {name:?}")))
        };
        let json = |name: &str| -> Result<&str> {
            let (kind, payload) = get(name)?;
            expect_kind(name, *kind, JSON)?;
            std::str::from_utf8(payload).map_err(|_| Error::malformed("checkpoint", format!("{name} is not UTF-8")))
        };
        let spec: NetworkSpec =
            serde_json::from_str(json("spec")?).map_err(|e| Error::malformed("checkpoint", format!("spec: {e}")))?;
        let config: CongealConfig = serde_json::from_str(json("config")?)
            .map_err(|e| Error::malformed("checkpoint", format!("config: {e}")))?;
        let f32s = |name: &str| -> Result<Vec<f32>> {
            let (kind, payload) = get(name)?;
            expect_kind(name, *kind, F32)?;
            Ok(payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let u64s = |name: &str| -> Result<Vec<u64>> {
            let (kind, payload) = get(name)?;
            expect_kind(name, *kind, U64)?;
            Ok(payload
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let f64s = |name: &str| -> Result<Vec<f64>> {
            let (kind, payload) = get(name)?;
            expect_kind(name, *kind, F64)?;
            Ok(payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };

        let layout = crate::models::Layout::new(&spec)?;
        let steps = u64s("adam.t")?;
        if steps.len() != layout.params.len() {
            return Err(Error::malformed(
                "checkpoint",
                "step counter count does not match the network",
            ));
        }
        let mut params = Vec::with_capacity(layout.params.len());
        let mut moments = Vec::with_capacity(layout.params.len());
        for (info, &t) in layout.params.iter().zip(&steps) {
            let w = f32s(&format!("w:{}", info.name))?;
            let m = f32s(&format!("m:{}", info.name))?;
            let v = f32s(&format!("v:{}", info.name))?;
            let numel: usize = info.shape.iter().product();
            if w.len() != numel || m.len() != numel || v.len() != numel {
                return Err(Error::malformed(
                    "checkpoint",
                    format!("tensor {} has the wrong length", info.name),
                ));
            }
            params.push(Tensor::new(info.shape.clone(), w)?);
            moments.push(AdamState { m, v, t });
        }
        let model = ModelState::from_parts(spec.clone(), params, moments)?;
        let reference = Tensor::new([1, spec.channels, spec.height, spec.width], f32s("reference")?)
            .map_err(|_| Error::malformed("checkpoint", "reference has the wrong size"))?;

        let counters = u64s("progress")?;
        let [seed, epochs_done, since_best, stopped] = counters[..] else {
            return Err(Error::malformed("checkpoint", "progress counters"));
        };
        let best_probe = f64s("progress.best")?
            .first()
            .copied()
            .ok_or_else(|| Error::malformed("checkpoint", "missing best probe"))?;
        let rows = f64s("history")?;
        if rows.len() != 6 * epochs_done as usize {
            return Err(Error::malformed(
                "checkpoint",
                "history length disagrees with epoch count",
            ));
        }
        let opt = |v: f64| (!v.is_nan()).then_some(v);
        let history = rows
            .chunks_exact(6)
            .map(|r| EpochStats {
                epoch: r[0] as usize,
                total: r[1],
                distortion: opt(r[2]),
                reconstruction: opt(r[3]),
                penalty: opt(r[4]),
                probe_apsnr: r[5],
            })
            .collect();
        Ok(Checkpoint {
            config,
            model,
            reference,
            progress: Progress {
                seed,
                epochs_done: epochs_done as usize,
                history,
                best_probe,
                since_best: since_best as usize,
                stopped: stopped != 0,
            },
        })
    }
}

fn expect_kind(name: &str, kind: u8, want: u8) -> Result<()> {
    if kind != want {
        return Err(Error::malformed(
            "checkpoint",
            format!("section {name:?} has kind {kind}, expected {want}"),
        ));
    }
    Ok(())
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, len: usize) -> Result<&'a [u8]> {
    let end = at
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or(Error::Truncated {
            what: "checkpoint",
            expected: at.saturating_add(len),
            found: bytes.len(),
        })?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

fn parse_sections(bytes: &[u8]) -> Result<BTreeMap<String, (u8, &[u8])>> {
    let mut at = 0;
    let magic = take(bytes, &mut at, 4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic(u32::from_be_bytes(magic.try_into().unwrap())));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let count = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().unwrap());
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(bytes, &mut at, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(bytes, &mut at, name_len)?)
            .map_err(|_| Error::malformed("checkpoint", "section name is not UTF-8"))?
            .to_string();
        let kind = take(bytes, &mut at, 1)?[0];
        let len = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().unwrap());
        let crc = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().unwrap());
        let len = usize::try_from(len).map_err(|_| Error::malformed("checkpoint", "section too large"))?;
        let payload = take(bytes, &mut at, len)?;
        let width = match kind {
            JSON => 1,
            F32 => 4,
            U64 | F64 => 8,
            k => return Err(Error::malformed("checkpoint", format!("unknown section kind {k}"))),
        };
        if len % width != 0 {
            return Err(Error::malformed(
                "checkpoint",
                format!("section {name:?} has a ragged length"),
            ));
        }
        if crc32fast::hash(payload) != crc {
            return Err(Error::malformed(
                "checkpoint",
                format!("checksum mismatch in section {name:?}"),
            ));
        }
        if out.insert(name.clone(), (kind, payload)).is_some() {
            return Err(Error::malformed("checkpoint", format!("duplicate section {name:?}")));
        }
    }
    if at != bytes.len() {
        return Err(Error::malformed("checkpoint", "trailing bytes after the last section"));
    }
    Ok(out)
}

struct Writer {
    buf: Vec<u8>,
    count: u32,
}

impl Writer {
    fn section(&mut self, name: &str, kind: u8, payload: &[u8]) {
        self.buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.push(kind);
        self.buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
        self.buf.extend_from_slice(payload);
        self.count += 1;
    }

    fn f32s(&mut self, name: &str, v: &[f32]) {
        let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.section(name, F32, &bytes);
    }

    fn u64s(&mut self, name: &str, v: &[u64]) {
        let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.section(name, U64, &bytes);
    }

    fn f64s(&mut self, name: &str, v: &[f64]) {
        let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.section(name, F64, &bytes);
    }
}

/// Serialises a checkpoint to bytes.
pub fn checkpoint_bytes(
    config: &CongealConfig,
    model: &ModelState,
    reference: &Tensor<f32>,
    progress: &Progress,
) -> Result<Vec<u8>> {
    let mut w = Writer {
        buf: Vec::new(),
        count: 0,
    };
    let spec = serde_json::to_string(&model.spec).map_err(|e| Error::malformed("spec", e.to_string()))?;
    let cfg = serde_json::to_string(config).map_err(|e| Error::malformed("config", e.to_string()))?;
    w.section("spec", JSON, spec.as_bytes());
    w.section("config", JSON, cfg.as_bytes());
    for ((info, p), m) in model.layout.params.iter().zip(&model.params).zip(&model.moments) {
        w.f32s(&format!("w:{}", info.name), p.data());
        w.f32s(&format!("m:{}", info.name), &m.m);
        w.f32s(&format!("v:{}", info.name), &m.v);
    }
    let steps: Vec<u64> = model.moments.iter().map(|m| m.t).collect();
    w.u64s("adam.t", &steps);
    w.f32s("reference", reference.data());
    w.u64s(
        "progress",
        &[
            progress.seed,
            progress.epochs_done as u64,
            progress.since_best as u64,
            progress.stopped as u64,
        ],
    );
    w.f64s("progress.best", &[progress.best_probe]);
    let rows: Vec<f64> = progress
        .history
        .iter()
        .flat_map(|e| {
            [
                e.epoch as f64,
                e.total,
                e.distortion.unwrap_or(f64::NAN),
                e.reconstruction.unwrap_or(f64::NAN),
                e.penalty.unwrap_or(f64::NAN),
                e.probe_apsnr,
            ]
        })
        .collect();
    w.f64s("history", &rows);

    let mut out = Vec::with_capacity(w.buf.len() + 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&w.count.to_le_bytes());
    out.extend_from_slice(&w.buf);
    Ok(out)
}

/// Writes a checkpoint next to `path` and renames it into place, so readers
/// never see a partial file.
pub fn save_checkpoint(
    path: &Path,
    config: &CongealConfig,
    model: &ModelState,
    reference: &Tensor<f32>,
    progress: &Progress,
) -> Result<()> {
    let bytes = checkpoint_bytes(config, model, reference, progress)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
