//! On-disk corpora: one directory per clip plus an `index.txt` split list.

use std::fs;
use std::path::{Path, PathBuf};

use emc_core::{ClipRecord, EmotionFeatures, EmotionSource, Split};

use crate::error::{HarnessError, Result};
use crate::featfile::{read_features, write_atomic, write_features, Manifest, MANIFEST_FILE};

pub const INDEX_FILE: &str = "index.txt";
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

fn clip_dir(root: &Path, id: &str) -> PathBuf {
    root.join(id)
}

/// Writes every sequence of `clip` under `dir` and returns the manifest.
pub fn write_clip(dir: &Path, clip: &ClipRecord<f64>) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut seqs = vec![
        ("facial", &clip.facial),
        ("speech", &clip.speech),
        ("emotion_f", clip.emotion_facial.values()),
        ("emotion_s", clip.emotion_speech.values()),
        ("listener", &clip.listener),
    ];
    let gt_roles: Vec<String> = (0..clip.appropriate.len()).map(|k| format!("gt_{k}")).collect();
    seqs.extend(gt_roles.iter().map(|r| r.as_str()).zip(&clip.appropriate));
    let mut manifest = Manifest::default();
    for (role, t) in seqs {
        let file = format!("{role}.emcf");
        write_features(&dir.join(&file), t)?;
        manifest.entries.push((role.to_string(), file));
    }
    write_atomic(&dir.join(MANIFEST_FILE), manifest.to_text().as_bytes())?;
    Ok(manifest)
}

/// Loads the clip a manifest describes; the id is the manifest's directory name.
pub fn read_clip(manifest_path: &Path) -> Result<ClipRecord<f64>> {
    let manifest = Manifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .unwrap_or_else(|| "clip".to_string());
    let need = |role: &str| -> Result<PathBuf> {
        manifest
            .get(role)
            .map(|p| dir.join(p))
            .ok_or_else(|| HarnessError::corrupt(manifest_path, format!("missing role {role}")))
    };
    let emotion = |role: &str, source| -> Result<EmotionFeatures<f64>> {
        let path = need(role)?;
        EmotionFeatures::new(source, read_features(&path)?).map_err(|e| HarnessError::corrupt(&path, e.to_string()))
    };
    let appropriate = manifest
        .ground_truth()
        .into_iter()
        .map(|p| read_features(&dir.join(p)))
        .collect::<Result<Vec<_>>>()?;
    let clip = ClipRecord {
        id,
        facial: read_features(&need("facial")?)?,
        speech: read_features(&need("speech")?)?,
        emotion_facial: emotion("emotion_f", EmotionSource::Facial)?,
        emotion_speech: emotion("emotion_s", EmotionSource::Speech)?,
        listener: read_features(&need("listener")?)?,
        appropriate,
    };
    clip.validate().map_err(|e| HarnessError::corrupt(manifest_path, e.to_string()))?;
    Ok(clip)
}

/// Writes a split corpus under `root`.
pub fn write_dataset(root: &Path, split: &Split<ClipRecord<f64>>) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| HarnessError::io(root, e))?;
    let mut index = String::new();
    for (name, clips) in SPLIT_NAMES.iter().zip([&split.train, &split.val, &split.test]) {
        for clip in clips {
            write_clip(&clip_dir(root, &clip.id), clip)?;
            index.push_str(&format!("{}={name}\n", clip.id));
        }
    }
    write_atomic(&root.join(INDEX_FILE), index.as_bytes())
}

/// Reads a corpus written by [`write_dataset`].
pub fn read_dataset(root: &Path) -> Result<Split<ClipRecord<f64>>> {
    let index_path = root.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path).map_err(|e| HarnessError::io(&index_path, e))?;
    let mut split = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let Some((id, part)) = line.split_once('=') else {
            return Err(HarnessError::corrupt(&index_path, format!("bad index line {line:?}")));
        };
        let clip = read_clip(&clip_dir(root, id).join(MANIFEST_FILE))?;
        match part {
            "train" => split.train.push(clip),
            "val" => split.val.push(clip),
            "test" => split.test.push(clip),
            other => return Err(HarnessError::corrupt(&index_path, format!("unknown split {other:?}"))),
        }
    }
    Ok(split)
}

/// Clips under `root`: an indexed corpus, or every subdirectory with a manifest.
pub fn read_clips(root: &Path) -> Result<Vec<ClipRecord<f64>>> {
    if root.join(INDEX_FILE).exists() {
        let s = read_dataset(root)?;
        return Ok(s.train.into_iter().chain(s.val).chain(s.test).collect());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| HarnessError::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_clip(&d.join(MANIFEST_FILE))).collect()
}
