//! Generation over a split and metric reports.

use std::path::Path;

use rayon::prelude::*;

use emc_core::metrics::{evaluate_sets, fr_dist, MetricConfig, MetricsReport, NOT_APPLICABLE};
use emc_core::synth::id_hash;
use emc_core::{Clip, FillStrategy, GenerateOptions, ModalityMask, Model, ReactionSet, RngState};

use crate::error::{HarnessError, Result};
use crate::featfile::write_atomic;

pub fn parse_mask(name: &str) -> Result<ModalityMask> {
    match name {
        "full" => Ok(ModalityMask::FULL),
        "no-speech" => Ok(ModalityMask::NO_SPEECH),
        "no-facial" => Ok(ModalityMask::NO_FACIAL),
        other => Err(HarnessError::Usage(format!("mask must be full, no-speech or no-facial, got {other:?}"))),
    }
}

/// Random stream for one clip, independent of its position in the split.
pub fn clip_stream(seed: u64, id: &str) -> RngState {
    RngState::new(seed).fork(id_hash(id))
}

/// `alpha` generations per clip, paired with the clip's ground truth.
pub fn reaction_sets(
    model: &Model,
    clips: &[Clip],
    mask: ModalityMask,
    alpha: usize,
    fill: FillStrategy,
    seed: u64,
) -> Result<Vec<ReactionSet<f64>>> {
    if clips.is_empty() {
        return Err(HarnessError::Data("empty evaluation split".into()));
    }
    let opts = GenerateOptions { fill, ..GenerateOptions::default() };
    let sets = clips
        .par_iter()
        .map(|c| {
            let mut rng = clip_stream(seed, &c.id);
            let generated = model.generate_with(c, mask, &mut rng, alpha, opts)?;
            ReactionSet::new(c.id.clone(), generated, c.appropriate.clone(), c.speaker_reference().clone())
        })
        .collect::<emc_core::Result<Vec<_>>>()?;
    Ok(sets)
}

pub fn evaluate(
    model: &Model,
    clips: &[Clip],
    mask: ModalityMask,
    alpha: usize,
    fill: FillStrategy,
    metrics: &MetricConfig,
    seed: u64,
) -> Result<MetricsReport> {
    let sets = reaction_sets(model, clips, mask, alpha, fill, seed)?;
    Ok(evaluate_sets(&sets, metrics)?)
}

/// Median over clips of the closest-ground-truth DTW of one generation.
pub fn calibrate_tau(model: &Model, clips: &[Clip], seed: u64) -> Result<f64> {
    let sets = reaction_sets(model, clips, ModalityMask::FULL, 1, FillStrategy::Cma, seed)?;
    let mut values: Vec<f64> = sets.iter().map(|s| fr_dist(std::slice::from_ref(s))).collect::<emc_core::Result<_>>()?;
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Ok(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

pub fn report_json(report: &MetricsReport) -> String {
    let mut map = serde_json::Map::new();
    for (k, v) in report.entries() {
        let value = match (k, v) {
            (_, None) => serde_json::Value::String(NOT_APPLICABLE.into()),
            ("max_lag" | "alpha", Some(v)) => serde_json::Value::from(v as u64),
            (_, Some(v)) => serde_json::Value::from(v),
        };
        map.insert(k.to_string(), value);
    }
    map.insert("frrea_features".into(), serde_json::Value::String("raw".into()));
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("report serializes");
    text.push('\n');
    text
}

/// Writes `path` as key=value text and `path.json` alongside it.
pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    write_atomic(path, report.to_key_value().as_bytes())?;
    let mut json = path.as_os_str().to_owned();
    json.push(".json");
    write_atomic(Path::new(&json), report_json(report).as_bytes())
}
