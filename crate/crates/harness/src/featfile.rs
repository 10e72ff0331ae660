//! `EMCF` sequence files and clip manifests.
//!
//! A feature file is the magic `EMCF`, then little-endian `u32` version,
//! frame count and width, then `frames × width` little-endian `f32`
//! values in row-major order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use emc_core::{Scalar, Tensor};

use crate::error::{HarnessError, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"EMCF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode_features<S: Scalar>(t: &Tensor<S>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.len());
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [FEATURE_VERSION, t.rows() as u32, t.cols() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode_features<S: Scalar>(bytes: &[u8], path: &Path) -> Result<Tensor<S>> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != FEATURE_MAGIC {
        return Err(HarnessError::corrupt(path, "missing EMCF header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != FEATURE_VERSION {
        return Err(HarnessError::Version { path: path.into(), found: version, expected: FEATURE_VERSION });
    }
    let (frames, dim) = (word(1) as usize, word(2) as usize);
    let expected = frames.checked_mul(dim).and_then(|n| n.checked_mul(4)).map(|n| n + HEADER_LEN);
    if expected != Some(bytes.len()) {
        return Err(HarnessError::corrupt(path, format!("{} bytes for a {frames}x{dim} payload", bytes.len())));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| S::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Tensor::matrix(frames, dim, data).map_err(|e| HarnessError::corrupt(path, e.to_string()))
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| HarnessError::io(path, e))
}

pub fn write_features<S: Scalar>(path: &Path, t: &Tensor<S>) -> Result<()> {
    write_atomic(path, &encode_features(t))
}

pub fn read_features<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    decode_features(&read_bytes(path)?, path)
}

/// Role → relative path, in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

fn known_role(role: &str) -> bool {
    matches!(role, "facial" | "speech" | "emotion_f" | "emotion_s" | "listener")
        || role.strip_prefix("gt_").is_some_and(|k| k.parse::<usize>().is_ok())
}

impl Manifest {
    pub fn get(&self, role: &str) -> Option<&str> {
        self.entries.iter().find(|(r, _)| r == role).map(|(_, p)| p.as_str())
    }

    /// `gt_0`, `gt_1`, ... paths in index order.
    pub fn ground_truth(&self) -> Vec<&str> {
        let mut gts: Vec<(usize, &str)> = self
            .entries
            .iter()
            .filter_map(|(r, p)| r.strip_prefix("gt_").and_then(|k| k.parse().ok()).map(|k| (k, p.as_str())))
            .collect();
        gts.sort();
        gts.into_iter().map(|(_, p)| p).collect()
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(r, p)| format!("{r}={p}\n")).collect()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let Some((role, rel)) = line.split_once('=') else {
                return Err(HarnessError::corrupt(path, format!("bad manifest line {line:?}")));
            };
            let (role, rel) = (role.trim(), rel.trim());
            if !known_role(role) {
                return Err(HarnessError::corrupt(path, format!("unknown role {role:?}")));
            }
            if entries.iter().any(|(r, _)| r == role) {
                return Err(HarnessError::corrupt(path, format!("duplicate role {role:?}")));
            }
            entries.push((role.to_string(), rel.to_string()));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path)
    }
}
