use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, LabeledEvent, Provenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split ratios must be in [0, 1] and sum to 1, got {}/{}/{}",
                self.train, self.val, self.test
            )));
        }
        if self.val + self.test <= 0.0 {
            return Err(Error::invalid("validation and test ratios are both zero"));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for `n` items: floor for train, the
    /// remainder shared between val and test with ties going to val.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.train * n as f64) + 1e-9).floor() as usize;
        let rest = n - train.min(n);
        let val = (rest as f64 * self.val / (self.val + self.test)).round() as usize;
        (train.min(n), val, rest - val)
    }
}

/// Train/validation/test partition of event ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    /// Checks lineage-disjointness and that val/test hold only field events.
    pub fn validate(&self, events: &[LabeledEvent]) -> Result<()> {
        let by_id: BTreeMap<&str, &LabeledEvent> = events.iter().map(|e| (e.id.as_str(), e)).collect();
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (part, ids) in [&self.train, &self.val, &self.test].into_iter().enumerate() {
            for id in ids {
                let e = by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::invalid(format!("split references unknown event `{id}`")))?;
                if part > 0 && e.provenance == Provenance::Synthetic {
                    return Err(Error::invalid(format!("synthetic event `{id}` in a held-out partition")));
                }
                if let Some(prev) = seen.insert(e.lineage(), part) {
                    if prev != part {
                        return Err(Error::invalid(format!(
                            "lineage `{}` appears in more than one partition",
                            e.lineage()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Stratified, lineage-preserving split.
///
/// Events are grouped by lineage (an original and its augmented copies) and
/// the groups of each class are shuffled with `seed` and cut according to
/// [`SplitRatios::sizes`].
pub fn split(events: &[LabeledEvent], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    if events.is_empty() {
        return Err(Error::InsufficientData("no events to split".into()));
    }
    let ids: HashSet<&str> = events.iter().map(|e| e.id.as_str()).collect();
    if ids.len() != events.len() {
        return Err(Error::invalid("duplicate event ids"));
    }

    let mut out = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (k, label) in [Label::TrueImpact, Label::FalseImpact].into_iter().enumerate() {
        // BTreeMap keeps the pre-shuffle order independent of input order.
        let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in events.iter().filter(|e| e.label == label) {
            groups.entry(e.lineage()).or_default().push(e.id.as_str());
        }
        if groups.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "{} {label} events; at least 3 per class are needed",
                groups.len()
            )));
        }
        let mut groups: Vec<Vec<&str>> = groups.into_values().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        groups.shuffle(&mut rng);
        let (n_train, n_val, _) = ratios.sizes(groups.len());
        for (i, group) in groups.into_iter().enumerate() {
            let dest = if i < n_train {
                &mut out.train
            } else if i < n_train + n_val {
                &mut out.val
            } else {
                &mut out.test
            };
            dest.extend(group.into_iter().map(String::from));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::augment_by_factor;
    use crate::signals::KinematicSignal;

    fn events(n_true: usize, n_false: usize) -> Vec<LabeledEvent> {
        let mk = |id: String, label| LabeledEvent::new(id, KinematicSignal::zeros(), label, Provenance::Field);
        (0..n_true)
            .map(|i| mk(format!("t{i}"), Label::TrueImpact))
            .chain((0..n_false).map(|i| mk(format!("f{i}"), Label::FalseImpact)))
            .collect()
    }

    fn count(ids: &[String], prefix: char) -> usize {
        ids.iter().filter(|i| i.starts_with(prefix)).count()
    }

    #[test]
    fn field_true_count_sizes() {
        assert_eq!(SplitRatios::default().sizes(1024), (716, 154, 154));
        assert_eq!(SplitRatios::default().sizes(10990), (7693, 1649, 1648));
    }

    #[test]
    fn ten_per_class_tie_goes_to_val() {
        let s = split(&events(10, 10), SplitRatios::default(), 4).unwrap();
        assert_eq!((count(&s.train, 't'), count(&s.val, 't'), count(&s.test, 't')), (7, 2, 1));
        assert_eq!((count(&s.train, 'f'), count(&s.val, 'f'), count(&s.test, 'f')), (7, 2, 1));
    }

    #[test]
    fn deterministic_per_seed() {
        let ev = events(40, 300);
        assert_eq!(split(&ev, SplitRatios::default(), 7).unwrap(), split(&ev, SplitRatios::default(), 7).unwrap());
        assert_ne!(split(&ev, SplitRatios::default(), 7).unwrap(), split(&ev, SplitRatios::default(), 8).unwrap());
    }

    #[test]
    fn too_few_events_of_a_class() {
        assert!(matches!(
            split(&events(2, 50), SplitRatios::default(), 0),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(split(&[], SplitRatios::default(), 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn bad_ratios() {
        let r = SplitRatios { train: 0.8, val: 0.15, test: 0.15 };
        assert!(matches!(split(&events(5, 5), r, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn lineages_never_straddle() {
        let base = events(30, 60);
        let aug = augment_by_factor(&base, 3).unwrap();
        let s = split(&aug, SplitRatios::default(), 3).unwrap();
        s.validate(&aug).unwrap();
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), aug.len());
        // 30 true lineages -> 21/5/4 lineages, three events each
        assert_eq!(count(&s.train, 't'), 63);
    }

    #[test]
    fn validate_rejects_synthetic_in_test() {
        let mut ev = events(10, 10);
        let s = split(&ev, SplitRatios::default(), 1).unwrap();
        let test_id = s.test[0].clone();
        ev.iter_mut().find(|e| e.id == test_id).unwrap().provenance = Provenance::Synthetic;
        assert!(s.validate(&ev).is_err());
    }
}
