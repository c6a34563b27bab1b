//! Binary parameter checkpoints: versioned header, then (key, shape, raw
//! doubles) records. Round trips are bit-exact.

use std::path::Path;

use crate::data::{Scaler, ScalingKind};
use crate::error::{Error, Result};
use crate::graph::GraphMode;
use crate::tensor::Tensor;

use super::{BackboneKind, BackboneParams, MGMConfig};

const MAGIC: &[u8; 4] = b"HGNN";
const VERSION: u32 = 1;

/// Everything needed to forecast with a trained backbone.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub cfg: MGMConfig,
    pub params: BackboneParams,
    /// The scaler fitted at train time; forecasts are produced in original
    /// units only when this matches the training setup.
    pub scaler: Option<Scaler>,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn record(&mut self, key: &str, shape: &[usize], data: &[f64]) {
        self.str(key);
        self.u32(shape.len() as u32);
        for d in shape {
            self.u64(*d as u64);
        }
        for v in data {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf-8 key".into()))
    }
}

fn graph_mode_tag(mode: GraphMode) -> u8 {
    match mode {
        GraphMode::BottomOnly => 0,
        GraphMode::FullHierarchy => 1,
    }
}

fn graph_mode_from_tag(tag: u8) -> Result<GraphMode> {
    match tag {
        0 => Ok(GraphMode::BottomOnly),
        1 => Ok(GraphMode::FullHierarchy),
        other => Err(Error::Checkpoint(format!("unknown graph mode tag {other}"))),
    }
}

/// Serialize a checkpoint to bytes.
pub fn checkpoint_to_bytes(cp: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u8(cp.cfg.kind.tag());
    w.u8(graph_mode_tag(cp.cfg.graph_mode));
    w.u32(cp.cfg.input_window as u32);
    w.u32(cp.cfg.horizon as u32);
    w.u32(cp.cfg.hidden as u32);
    w.u32(cp.cfg.layers as u32);
    w.u32(cp.cfg.k as u32);
    w.u32(cp.cfg.channels as u32);
    w.u32(cp.cfg.dilation_q as u32);
    w.f64(cp.cfg.beta);
    w.f64(cp.cfg.alpha_geg);

    match &cp.scaler {
        None => w.u8(0),
        Some(s) => {
            w.u8(match s.kind() {
                ScalingKind::PerNodeZscore => 1,
                ScalingKind::None => 2,
            });
            w.u64(s.rows() as u64);
            for v in s.means() {
                w.f64(*v);
            }
            for v in s.stds() {
                w.f64(*v);
            }
        }
    }

    w.u64(cp.params.len() as u64);
    for (key, tensor) in cp.params.iter() {
        w.record(key, tensor.shape(), tensor.data());
    }
    w.buf
}

/// Deserialize a checkpoint from bytes.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let kind = BackboneKind::from_tag(r.u8()?)?;
    let graph_mode = graph_mode_from_tag(r.u8()?)?;
    let cfg = MGMConfig {
        kind,
        graph_mode,
        input_window: r.u32()? as usize,
        horizon: r.u32()? as usize,
        hidden: r.u32()? as usize,
        layers: r.u32()? as usize,
        k: r.u32()? as usize,
        channels: r.u32()? as usize,
        dilation_q: r.u32()? as usize,
        beta: r.f64()?,
        alpha_geg: r.f64()?,
    };

    let scaler = match r.u8()? {
        0 => None,
        tag @ (1 | 2) => {
            let rows = r.u64()? as usize;
            let mut means = Vec::with_capacity(rows);
            for _ in 0..rows {
                means.push(r.f64()?);
            }
            let mut stds = Vec::with_capacity(rows);
            for _ in 0..rows {
                stds.push(r.f64()?);
            }
            let kind = if tag == 1 { ScalingKind::PerNodeZscore } else { ScalingKind::None };
            Some(Scaler::from_parts(kind, means, stds))
        }
        other => return Err(Error::Checkpoint(format!("unknown scaler tag {other}"))),
    };

    let count = r.u64()? as usize;
    let mut params = BackboneParams::default();
    for _ in 0..count {
        let key = r.str()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64()?);
        }
        params.insert(key, Tensor::param(&shape, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint records".into()));
    }
    Ok(Checkpoint { cfg, params, scaler })
}

/// Write a checkpoint to disk (temp file then rename).
pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    crate::write_atomic(path, &checkpoint_to_bytes(cp))
}

/// Read a checkpoint from disk.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    checkpoint_from_bytes(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}
