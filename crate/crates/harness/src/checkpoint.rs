//! `EMCK` checkpoint files.
//!
//! Layout, all integers little-endian:
//! magic `EMCK`, `u32` version, `u32` config length and the UTF-8 model
//! config block, `u32` parameter count, then per parameter `u32` name
//! length, name, `u32` rank, `u32` extents and `f32` values; finally the
//! RNG position (`u64` seed, `u64` stream, `u128` word position) and the
//! `u64` epoch counter.

use std::path::Path;

use emc_core::{Model, RngPosition, RngState, Tensor};

use crate::config::{parse_model, write_model};
use crate::error::{HarnessError, Result};
use crate::featfile::{read_bytes, write_atomic};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub rng: RngPosition,
    pub epoch: u64,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(model: &Model, rng: RngPosition, epoch: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = write_model(model.config());
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(cfg.as_bytes());
    let params = model.params();
    put_u32(&mut out, params.len());
    for id in params.ids() {
        let name = params.name(id);
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        let t = params.get(id);
        put_u32(&mut out, t.ndim());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.extend_from_slice(&rng.seed.to_le_bytes());
    out.extend_from_slice(&rng.stream.to_le_bytes());
    out.extend_from_slice(&rng.word_pos.to_le_bytes());
    out.extend_from_slice(&epoch.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(HarnessError::corrupt(self.path, format!("truncated at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        let path = self.path;
        std::str::from_utf8(self.take(n)?).map_err(|_| HarnessError::corrupt(path, "non-UTF-8 text"))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(HarnessError::corrupt(path, "missing EMCK header"));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(HarnessError::Version { path: path.into(), found: version, expected: CHECKPOINT_VERSION });
    }
    let n = r.u32()?;
    let config = parse_model(r.text(n)?).map_err(|e| HarnessError::corrupt(path, format!("config block: {e}")))?;
    let mut model = Model::new(config, 0)?;
    let count = r.u32()?;
    if count != model.params().len() {
        return Err(HarnessError::corrupt(path, format!("{count} parameters, model has {}", model.params().len())));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let n = r.u32()?;
        let name = r.text(n)?;
        let Some(id) = model.params().find(name) else {
            return Err(HarnessError::corrupt(path, format!("unknown parameter {name:?}")));
        };
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(HarnessError::corrupt(path, format!("parameter {name:?} appears twice")));
        }
        let rank = r.u32()?;
        if rank > 8 {
            return Err(HarnessError::corrupt(path, format!("parameter {name}: rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if shape != model.params().get(id).shape() {
            return Err(HarnessError::corrupt(
                path,
                format!("parameter {name}: shape {shape:?}, config expects {:?}", model.params().get(id).shape()),
            ));
        }
        let len: usize = shape.iter().product();
        let data = r
            .take(len * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| HarnessError::corrupt(path, format!("parameter {name}: {e}")))?;
        model.params_mut().set(id, t)?;
    }
    let seed = r.u64()?;
    let stream = r.u64()?;
    let lo = r.u64()? as u128;
    let hi = r.u64()? as u128;
    let epoch = r.u64()?;
    if r.pos != bytes.len() {
        return Err(HarnessError::corrupt(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { model, rng: RngPosition { seed, stream, word_pos: lo | (hi << 64) }, epoch })
}

pub fn save(path: &Path, model: &Model, rng: &RngState, epoch: u64) -> Result<()> {
    write_atomic(path, &encode(model, rng.position(), epoch))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&read_bytes(path)?, path)
}
