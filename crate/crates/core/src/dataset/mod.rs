//! Labelled events and the data discipline around them: loading, splitting,
//! augmentation, balancing, and assembling training strategies.

mod augment;
mod balance;
mod split;
mod strategy;

pub use augment::{
    augment_by_factor, augment_time_shift, augment_with, with_sensor_noise, AugmentConfig, FactorSemantics,
    MAX_SHIFT_MS,
};
pub use balance::{balance, BalancePolicy, ClassWeights, Ratio};
pub use split::{split, DatasetSplit, SplitRatios};
pub use strategy::{
    assemble_strategy, synthetic_count, AssembledPlan, Phase, Strategy, StrategyOptions, StrategySpec,
    TrainingPlan, TrainingSetting,
};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{parse_event_file, write_event_file, KinematicSignal};

/// Ground-truth class of an event. True impacts are the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    FalseImpact,
    TrueImpact,
}

impl Label {
    /// Output index in the detector's two-way softmax.
    pub const fn class_index(self) -> usize {
        match self {
            Label::FalseImpact => 0,
            Label::TrueImpact => 1,
        }
    }

    pub const fn from_class_index(i: usize) -> Self {
        if i == 1 {
            Label::TrueImpact
        } else {
            Label::FalseImpact
        }
    }

    pub const fn is_true(self) -> bool {
        matches!(self, Label::TrueImpact)
    }

    /// `true` / `false`, as written in labels files.
    pub const fn as_str(self) -> &'static str {
        match self {
            Label::TrueImpact => "true",
            Label::FalseImpact => "false",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "true" => Ok(Label::TrueImpact),
            "false" => Ok(Label::FalseImpact),
            other => Err(Error::invalid(format!("label must be `true` or `false`, found `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Recorded by a mouthguard and verified on video.
    Field,
    /// Produced by the impact simulator.
    Synthetic,
}

#[derive(Debug, Clone)]
pub struct LabeledEvent {
    pub id: String,
    pub signal: Arc<KinematicSignal>,
    pub label: Label,
    pub provenance: Provenance,
    /// Id of the un-augmented parent; `None` for originals.
    pub origin_id: Option<String>,
}

impl LabeledEvent {
    pub fn new(id: impl Into<String>, signal: KinematicSignal, label: Label, provenance: Provenance) -> Self {
        Self {
            id: id.into(),
            signal: Arc::new(signal),
            label,
            provenance,
            origin_id: None,
        }
    }

    /// Id of the original event this one descends from (itself for originals).
    pub fn lineage(&self) -> &str {
        self.origin_id.as_deref().unwrap_or(&self.id)
    }

    pub fn is_augmented(&self) -> bool {
        self.origin_id.is_some()
    }
}

/// Events indexed by id.
pub type EventPool = HashMap<String, LabeledEvent>;

pub fn index_events<'a>(events: impl IntoIterator<Item = &'a LabeledEvent>) -> EventPool {
    events.into_iter().map(|e| (e.id.clone(), e.clone())).collect()
}

/// Counts `(true, false)` events.
pub fn class_counts<'a>(events: impl IntoIterator<Item = &'a LabeledEvent>) -> (usize, usize) {
    events.into_iter().fold((0, 0), |(t, f), e| match e.label {
        Label::TrueImpact => (t + 1, f),
        Label::FalseImpact => (t, f + 1),
    })
}

pub const LABELS_HEADER: &str = "event_file,label";

/// Reads a labels file (`event_file,label`).
pub fn read_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, Label>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut out = BTreeMap::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == LABELS_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                path: path.into(),
                row: 1,
                column: "header".into(),
                message: format!("expected `{LABELS_HEADER}`, found `{}`", h.trim()),
            })
        }
        None => return Err(Error::file(path, "empty labels file")),
    }
    for (i, line) in lines {
        let parse_err = |column: &str, message: String| Error::Parse {
            path: path.into(),
            row: i + 1,
            column: column.into(),
            message,
        };
        let (file, label) = line
            .trim()
            .split_once(',')
            .ok_or_else(|| parse_err("label", "expected 2 columns".into()))?;
        let label: Label = label.parse().map_err(|e: Error| parse_err("label", e.to_string()))?;
        if out.insert(file.trim().to_string(), label).is_some() {
            return Err(parse_err("event_file", format!("duplicate entry `{}`", file.trim())));
        }
    }
    Ok(out)
}

pub fn write_labels<'a>(path: impl AsRef<Path>, entries: impl IntoIterator<Item = (&'a str, Label)>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from(LABELS_HEADER);
    text.push('\n');
    for (file, label) in entries {
        text.push_str(file);
        text.push(',');
        text.push_str(label.as_str());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

/// Event files (`*.csv`) in `dir`, sorted by name, excluding `exclude`.
pub fn list_event_files(dir: impl AsRef<Path>, exclude: Option<&Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let exclude = exclude.and_then(|p| p.canonicalize().ok());
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "csv") && path.is_file() {
            if exclude.is_some() && path.canonicalize().ok() == exclude {
                continue;
            }
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every event file in `directory` with its label from `labels_file`.
///
/// Every `*.csv` in the directory (other than the labels file itself) must be
/// labelled, and every labelled file must exist. Event ids are file stems.
pub fn load_field_dataset(directory: impl AsRef<Path>, labels_file: impl AsRef<Path>) -> Result<Vec<LabeledEvent>> {
    let directory = directory.as_ref();
    let labels_file = labels_file.as_ref();
    let labels = read_labels(labels_file)?;
    let files = list_event_files(directory, Some(labels_file))?;

    let mut jobs = Vec::with_capacity(files.len());
    for path in &files {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let label = *labels.get(&name).ok_or_else(|| Error::Unlabeled(path.clone()))?;
        jobs.push((path, label));
    }
    if let Some(missing) = labels.keys().find(|k| !directory.join(k).is_file()) {
        return Err(Error::file(directory.join(missing), "listed in labels file but missing"));
    }

    jobs.into_par_iter()
        .map(|(path, label)| {
            let signal = parse_event_file(path)?;
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(LabeledEvent::new(id, signal, label, Provenance::Field))
        })
        .collect()
}

/// Writes events as `<id>.csv` plus a labels file named `labels_name`.
pub fn write_dataset(directory: impl AsRef<Path>, events: &[LabeledEvent], labels_name: &str) -> Result<()> {
    let directory = directory.as_ref();
    fs::create_dir_all(directory).map_err(|e| Error::file(directory, e))?;
    events
        .par_iter()
        .try_for_each(|e| write_event_file(&e.signal, directory.join(format!("{}.csv", e.id))))?;
    let names: Vec<(String, Label)> = events.iter().map(|e| (format!("{}.csv", e.id), e.label)).collect();
    write_labels(directory.join(labels_name), names.iter().map(|(n, l)| (n.as_str(), *l)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(id: &str, label: Label) -> LabeledEvent {
        LabeledEvent::new(id, KinematicSignal::zeros(), label, Provenance::Field)
    }

    #[test]
    fn label_round_trip_and_index() {
        assert_eq!("true".parse::<Label>().unwrap(), Label::TrueImpact);
        assert_eq!(" FALSE ".parse::<Label>().unwrap(), Label::FalseImpact);
        assert!("maybe".parse::<Label>().is_err());
        assert_eq!(Label::from_class_index(Label::TrueImpact.class_index()), Label::TrueImpact);
    }

    #[test]
    fn loads_labelled_directory() {
        let dir = tempfile::tempdir().unwrap();
        let events = vec![
            event("a", Label::TrueImpact),
            event("b", Label::FalseImpact),
            event("c", Label::FalseImpact),
        ];
        write_dataset(dir.path(), &events, "labels.csv").unwrap();
        let loaded = load_field_dataset(dir.path(), dir.path().join("labels.csv")).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded[0].id, "a");
        assert_eq!(loaded[0].label, Label::TrueImpact);
        assert!(loaded.iter().all(|e| e.provenance == Provenance::Field && e.origin_id.is_none()));
    }

    #[test]
    fn unlabelled_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[event("a", Label::TrueImpact)], "labels.csv").unwrap();
        write_event_file(&KinematicSignal::zeros(), dir.path().join("stray.csv")).unwrap();
        let err = load_field_dataset(dir.path(), dir.path().join("labels.csv")).unwrap_err();
        assert!(matches!(&err, Error::Unlabeled(p) if p.ends_with("stray.csv")), "{err}");
        assert!(err.to_string().contains("stray.csv"));
    }

    #[test]
    fn labelled_but_missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[event("a", Label::TrueImpact)], "labels.csv").unwrap();
        fs::remove_file(dir.path().join("a.csv")).unwrap();
        let err = load_field_dataset(dir.path(), dir.path().join("labels.csv")).unwrap_err();
        assert!(err.to_string().contains("a.csv"), "{err}");
    }

    #[test]
    fn corrupt_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[event("a", Label::TrueImpact)], "labels.csv").unwrap();
        fs::write(dir.path().join("a.csv"), "t_ms,lax_g\n").unwrap();
        let err = load_field_dataset(dir.path(), dir.path().join("labels.csv")).unwrap_err();
        assert!(err.to_string().contains("a.csv"), "{err}");
    }

    #[test]
    fn bad_labels_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        fs::write(&p, "file,label\n").unwrap();
        assert!(matches!(read_labels(&p), Err(Error::Parse { .. })));
        fs::write(&p, "event_file,label\nx.csv,perhaps\n").unwrap();
        assert!(matches!(read_labels(&p), Err(Error::Parse { row: 2, .. })));
    }
}
