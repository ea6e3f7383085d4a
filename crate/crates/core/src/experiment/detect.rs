use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::{list_event_files, Label};
use crate::error::{Error, Result};
use crate::nnet::{labels_from_probs, predict_batch, Architecture, Model, Samples};
use crate::signals::{parse_event_file, EVENT_HEADER};

pub const PREDICTIONS_HEADER: &str = "event_id,label,prob_true";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub event_id: String,
    pub label: Label,
    pub prob_true: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectSummary {
    pub n_events: usize,
    /// Wall time of parsing plus inference.
    pub seconds: f64,
    /// `None` for an empty directory.
    pub events_per_hour: Option<f64>,
    pub predictions: Vec<Prediction>,
}

/// Event files of `dir`: `*.csv` files whose first line is the event header.
/// Labels files and other tables are skipped.
fn event_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for path in list_event_files(dir, None)? {
        let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        if text.lines().next().is_some_and(|l| l.trim() == EVENT_HEADER) {
            out.push(path);
        }
    }
    Ok(out)
}

/// Classifies every event file in `events_dir` with the model at
/// `model_path` and writes `event_id,label,prob_true` rows to `out_csv`.
/// With `expected`, a model of another architecture is rejected.
pub fn detect(
    model_path: impl AsRef<Path>,
    events_dir: impl AsRef<Path>,
    out_csv: impl AsRef<Path>,
    expected: Option<&Architecture>,
) -> Result<DetectSummary> {
    let model = Model::load(model_path, expected)?;
    let events_dir = events_dir.as_ref();
    let files = event_files(events_dir)?;
    if files.is_empty() {
        warn!("no event files in {}", events_dir.display());
    }
    let start = Instant::now();
    let signals = files.iter().map(parse_event_file).collect::<Result<Vec<_>>>()?;
    let samples = Samples::from_signals(&signals);
    let probs = if samples.is_empty() { Vec::new() } else { predict_batch(&model, &samples)? };
    let seconds = start.elapsed().as_secs_f64();

    let predictions: Vec<Prediction> = files
        .iter()
        .zip(labels_from_probs(&probs))
        .zip(&probs)
        .map(|((f, label), &p)| Prediction {
            event_id: f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            label,
            prob_true: p,
        })
        .collect();
    let mut text = String::from(PREDICTIONS_HEADER);
    text.push('\n');
    for p in &predictions {
        text.push_str(&format!("{},{},{:.6}\n", p.event_id, p.label, p.prob_true));
    }
    let out_csv = out_csv.as_ref();
    if let Some(parent) = out_csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    fs::write(out_csv, text).map_err(|e| Error::file(out_csv, e))?;
    Ok(DetectSummary {
        n_events: predictions.len(),
        seconds,
        events_per_hour: (!predictions.is_empty() && seconds > 0.0).then(|| predictions.len() as f64 * 3600.0 / seconds),
        predictions,
    })
}
