use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    augment_by_factor, balance, class_counts, split::DatasetSplit, with_sensor_noise, BalancePolicy, ClassWeights,
    EventPool, Label, LabeledEvent, Provenance,
};
use crate::error::{Error, Result};

/// Source mix of the training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    /// Field training split only.
    FieldOnly,
    /// Field training split plus synthetic true events amounting to
    /// `percent` of the field true count.
    SynthMix { percent: u32 },
    /// Synthetic pre-training followed by field-only fine-tuning.
    Pretrain,
}

impl Strategy {
    pub fn synthetic_percent(self) -> u32 {
        match self {
            Strategy::SynthMix { percent } => percent,
            _ => 0,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::FieldOnly => f.write_str("field_only"),
            Strategy::SynthMix { percent } => write!(f, "synth{percent}"),
            Strategy::Pretrain => f.write_str("pretrain"),
        }
    }
}

/// How the training partition is augmented and balanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingSetting {
    /// Original events at their natural imbalance.
    Unaugmented,
    /// Every training event time-shift augmented by the augmented factor.
    Augmented,
    /// True events augmented by the balance factor, false events undersampled
    /// to match.
    Balanced,
}

impl TrainingSetting {
    pub const ALL: [TrainingSetting; 3] = [
        TrainingSetting::Unaugmented,
        TrainingSetting::Augmented,
        TrainingSetting::Balanced,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainingSetting::Unaugmented => "unaugmented",
            TrainingSetting::Augmented => "augmented",
            TrainingSetting::Balanced => "balanced",
        }
    }
}

impl fmt::Display for TrainingSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrategySpec {
    pub strategy: Strategy,
    pub setting: TrainingSetting,
}

impl StrategySpec {
    pub fn new(strategy: Strategy, setting: TrainingSetting) -> Self {
        Self { strategy, setting }
    }

    /// Stable identifier such as `synth25_balanced`.
    pub fn name(&self) -> String {
        match self.strategy {
            // The pre-training schedule is fixed regardless of setting.
            Strategy::Pretrain => "pretrain".into(),
            s => format!("{s}_{}", self.setting),
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for StrategySpec {
    type Err = Error;

    /// Inverse of [`StrategySpec::name`]; `pretrain` maps to the balanced
    /// setting.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "pretrain" {
            return Ok(Self::new(Strategy::Pretrain, TrainingSetting::Balanced));
        }
        let bad = || Error::invalid(format!("unknown strategy `{s}`"));
        let (head, setting) = s.rsplit_once('_').ok_or_else(bad)?;
        let setting = TrainingSetting::ALL
            .into_iter()
            .find(|t| t.as_str() == setting)
            .ok_or_else(bad)?;
        let strategy = match head {
            "field_only" => Strategy::FieldOnly,
            _ => {
                let percent = head.strip_prefix("synth").and_then(|p| p.parse().ok()).ok_or_else(bad)?;
                Strategy::SynthMix { percent }
            }
        };
        Ok(Self::new(strategy, setting))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyOptions {
    /// Total signals per original in the augmented setting.
    pub augmented_factor: usize,
    /// Minority augmentation factor in the balanced setting and pre-training
    /// fine-tune phase.
    pub balance_factor: usize,
    /// Augmentation of the synthetic pool during pre-training.
    pub pretrain_synthetic_factor: usize,
    /// Inverse-frequency loss weights for the imbalanced settings.
    pub weight_imbalanced: bool,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Gaussian noise added to synthetic events, m/s^2 and rad/s.
    pub synthetic_lin_noise: f64,
    pub synthetic_ang_noise: f64,
}

impl Default for StrategyOptions {
    fn default() -> Self {
        Self {
            augmented_factor: 5,
            balance_factor: 2,
            pretrain_synthetic_factor: 5,
            weight_imbalanced: true,
            epochs: 30,
            pretrain_epochs: 30,
            finetune_epochs: 30,
            synthetic_lin_noise: 0.0,
            synthetic_ang_noise: 0.0,
        }
    }
}

/// One training phase: the event ids to train on, loss weights and epochs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub ids: Vec<String>,
    pub class_weights: ClassWeights,
    pub epochs: usize,
}

/// Serializable description of how a model is trained and evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub strategy_name: String,
    pub spec: StrategySpec,
    pub seed: u64,
    pub phases: Vec<Phase>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl TrainingPlan {
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::invalid("training plan has no phases"));
        }
        for p in &self.phases {
            p.class_weights.validate()?;
            if p.epochs == 0 {
                return Err(Error::invalid(format!("phase `{}` has zero epochs", p.name)));
            }
            if p.ids.is_empty() {
                return Err(Error::InsufficientData(format!("phase `{}` has no events", p.name)));
            }
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A plan together with every event it references.
#[derive(Debug, Clone)]
pub struct AssembledPlan {
    pub plan: TrainingPlan,
    pub pool: EventPool,
}

impl AssembledPlan {
    pub fn events<'a>(&'a self, ids: &'a [String]) -> impl Iterator<Item = &'a LabeledEvent> + 'a {
        ids.iter().map(move |id| &self.pool[id])
    }
}

/// Synthetic true events added at `percent` of `n_field_true`.
pub fn synthetic_count(percent: u32, n_field_true: usize) -> usize {
    (percent as f64 / 100.0 * n_field_true as f64).round() as usize
}

/// Builds the training plan for `spec`.
///
/// `split` partitions `field_events`; val and test ids are copied verbatim so
/// every strategy is scored on the same held-out events. Augmentation is
/// applied to the training partition only. Synthetic events are drawn from a
/// seeded permutation of `synthetic_events`, so smaller fractions are subsets
/// of larger ones.
pub fn assemble_strategy(
    spec: StrategySpec,
    field_events: &[LabeledEvent],
    split: &DatasetSplit,
    synthetic_events: &[LabeledEvent],
    options: &StrategyOptions,
    seed: u64,
) -> Result<AssembledPlan> {
    split.validate(field_events)?;
    let field = super::index_events(field_events);
    if field.values().any(|e| e.provenance != Provenance::Field) {
        return Err(Error::invalid("field event list contains synthetic events"));
    }
    let train: Vec<LabeledEvent> = split.train.iter().map(|id| field[id].clone()).collect();
    let (n_train_true, _) = class_counts(&train);

    let mut pool = EventPool::new();
    for id in split.val.iter().chain(&split.test) {
        pool.insert(id.clone(), field[id].clone());
    }

    let synthetic = synthetic_selection(spec, n_train_true, synthetic_events, options, seed)?;
    let phases = match spec.strategy {
        Strategy::FieldOnly | Strategy::SynthMix { .. } => {
            let mut events = train;
            events.extend(synthetic);
            let (events, weights) = apply_setting(&events, spec.setting, options, seed)?;
            vec![register(&mut pool, "train", events, weights, options.epochs)?]
        }
        Strategy::Pretrain => {
            let synth = augment_by_factor(&synthetic, options.pretrain_synthetic_factor)?;
            let false_events = matched_false(&train, synth.len(), seed)?;
            let mut phase1 = synth;
            phase1.extend(false_events);
            let (finetune, w2) = balance(&train, BalancePolicy::AugmentFactor(options.balance_factor), seed)?;
            vec![
                register(&mut pool, "pretrain", phase1, ClassWeights::unit(), options.pretrain_epochs)?,
                register(&mut pool, "finetune", finetune, w2, options.finetune_epochs)?,
            ]
        }
    };

    let plan = TrainingPlan {
        strategy_name: spec.name(),
        spec,
        seed,
        phases,
        val_ids: split.val.clone(),
        test_ids: split.test.clone(),
    };
    plan.validate()?;
    Ok(AssembledPlan { plan, pool })
}

fn synthetic_selection(
    spec: StrategySpec,
    n_train_true: usize,
    synthetic_events: &[LabeledEvent],
    options: &StrategyOptions,
    seed: u64,
) -> Result<Vec<LabeledEvent>> {
    let available: Vec<&LabeledEvent> = synthetic_events
        .iter()
        .filter(|e| e.label == Label::TrueImpact && !e.is_augmented())
        .collect();
    let required = match spec.strategy {
        Strategy::FieldOnly => return Ok(Vec::new()),
        Strategy::SynthMix { percent } => synthetic_count(percent, n_train_true),
        Strategy::Pretrain => available.len().max(1),
    };
    if available.len() < required {
        return Err(Error::InsufficientSynthetic {
            required,
            available: available.len(),
        });
    }
    if available.iter().any(|e| e.provenance != Provenance::Synthetic) {
        return Err(Error::invalid("synthetic event list contains field events"));
    }
    let mut order: Vec<usize> = (0..available.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5717));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0153_0153);
    order[..required]
        .iter()
        .map(|&i| with_sensor_noise(available[i], options.synthetic_lin_noise, options.synthetic_ang_noise, &mut rng))
        .collect()
}

fn apply_setting(
    events: &[LabeledEvent],
    setting: TrainingSetting,
    options: &StrategyOptions,
    seed: u64,
) -> Result<(Vec<LabeledEvent>, ClassWeights)> {
    let weighting = if options.weight_imbalanced {
        BalancePolicy::ClassWeights
    } else {
        BalancePolicy::None
    };
    match setting {
        TrainingSetting::Unaugmented => balance(events, weighting, seed),
        TrainingSetting::Augmented => balance(&augment_by_factor(events, options.augmented_factor)?, weighting, seed),
        TrainingSetting::Balanced => balance(events, BalancePolicy::AugmentFactor(options.balance_factor), seed),
    }
}

/// `n` false events from the training partition: a seeded sample when enough
/// exist, otherwise every original topped up with shifted copies.
fn matched_false(train: &[LabeledEvent], n: usize, seed: u64) -> Result<Vec<LabeledEvent>> {
    let mut originals: Vec<&LabeledEvent> = train.iter().filter(|e| e.label == Label::FalseImpact).collect();
    if originals.is_empty() {
        return Err(Error::InsufficientData("no false events in the training partition".into()));
    }
    originals.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xfa15e));
    let owned: Vec<LabeledEvent> = originals.into_iter().cloned().collect();
    let max_factor = super::MAX_SHIFT_MS + 1;
    let mut out = Vec::with_capacity(n);
    'fill: for factor_round in 0..max_factor {
        for e in &owned {
            if out.len() == n {
                break 'fill;
            }
            if factor_round == 0 {
                out.push(e.clone());
            } else {
                let copy = super::augment_time_shift(e, &[factor_round], max_factor)?;
                out.push(copy[1].clone());
            }
        }
    }
    if out.len() < n {
        return Err(Error::InsufficientData(format!(
            "pre-training needs {n} false events, only {} available after augmentation",
            out.len()
        )));
    }
    Ok(out)
}

fn register(
    pool: &mut EventPool,
    name: &str,
    events: Vec<LabeledEvent>,
    class_weights: ClassWeights,
    epochs: usize,
) -> Result<Phase> {
    let mut ids = Vec::with_capacity(events.len());
    let mut seen = HashSet::with_capacity(events.len());
    for e in events {
        if !seen.insert(e.id.clone()) {
            return Err(Error::invalid(format!("duplicate event id `{}` in phase `{name}`", e.id)));
        }
        ids.push(e.id.clone());
        pool.entry(e.id.clone()).or_insert(e);
    }
    Ok(Phase {
        name: name.into(),
        ids,
        class_weights,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split, SplitRatios};
    use crate::signals::KinematicSignal;

    fn field(n_true: usize, n_false: usize) -> Vec<LabeledEvent> {
        let mk = |id: String, label| LabeledEvent::new(id, KinematicSignal::zeros(), label, Provenance::Field);
        (0..n_true)
            .map(|i| mk(format!("t{i}"), Label::TrueImpact))
            .chain((0..n_false).map(|i| mk(format!("f{i}"), Label::FalseImpact)))
            .collect()
    }

    fn synthetic(n: usize) -> Vec<LabeledEvent> {
        (0..n)
            .map(|i| LabeledEvent::new(format!("s{i}"), KinematicSignal::zeros(), Label::TrueImpact, Provenance::Synthetic))
            .collect()
    }

    fn setup() -> (Vec<LabeledEvent>, DatasetSplit, Vec<LabeledEvent>) {
        let f = field(100, 1000);
        let s = split(&f, SplitRatios::default(), 11).unwrap();
        (f, s, synthetic(300))
    }

    fn n_synthetic(a: &AssembledPlan, phase: usize) -> usize {
        a.events(&a.plan.phases[phase].ids)
            .filter(|e| e.provenance == Provenance::Synthetic)
            .count()
    }

    #[test]
    fn names_parse_back() {
        for setting in TrainingSetting::ALL {
            for strategy in [Strategy::FieldOnly, Strategy::SynthMix { percent: 25 }, Strategy::SynthMix { percent: 100 }] {
                let spec = StrategySpec::new(strategy, setting);
                assert_eq!(spec.name().parse::<StrategySpec>().unwrap(), spec);
            }
        }
        assert_eq!("pretrain".parse::<StrategySpec>().unwrap().strategy, Strategy::Pretrain);
        for bad in ["", "synth_balanced", "synthx_balanced", "field_only", "field_only_sideways"] {
            assert!(bad.parse::<StrategySpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn field_only_has_no_synthetic() {
        let (f, s, syn) = setup();
        for setting in TrainingSetting::ALL {
            let a = assemble_strategy(StrategySpec::new(Strategy::FieldOnly, setting), &f, &s, &syn, &Default::default(), 1)
                .unwrap();
            assert_eq!(a.plan.phases.len(), 1);
            assert_eq!(n_synthetic(&a, 0), 0);
        }
    }

    #[test]
    fn synth_fraction_counts() {
        assert_eq!(synthetic_count(25, 1024), 256);
        assert_eq!(synthetic_count(100, 716), 716);
        let (f, s, syn) = setup();
        let spec = StrategySpec::new(Strategy::SynthMix { percent: 25 }, TrainingSetting::Unaugmented);
        let a = assemble_strategy(spec, &f, &s, &syn, &Default::default(), 1).unwrap();
        // 70 true events in the training split
        assert_eq!(n_synthetic(&a, 0), synthetic_count(25, 70));
        let (t, fa) = class_counts(a.events(&a.plan.phases[0].ids));
        let w = a.plan.phases[0].class_weights;
        assert_eq!(w.w_true.times(t as u64), w.w_false.times(fa as u64));
    }

    #[test]
    fn smaller_fractions_are_subsets() {
        let (f, s, syn) = setup();
        let ids = |pct| {
            let spec = StrategySpec::new(Strategy::SynthMix { percent: pct }, TrainingSetting::Unaugmented);
            let a = assemble_strategy(spec, &f, &s, &syn, &Default::default(), 4).unwrap();
            a.plan.phases[0]
                .ids
                .iter()
                .filter(|i| i.starts_with('s'))
                .cloned()
                .collect::<HashSet<_>>()
        };
        assert!(ids(25).is_subset(&ids(75)));
    }

    #[test]
    fn augmented_and_balanced_sizes() {
        let (f, s, syn) = setup();
        let opts = StrategyOptions::default();
        let a = assemble_strategy(StrategySpec::new(Strategy::FieldOnly, TrainingSetting::Augmented), &f, &s, &syn, &opts, 1)
            .unwrap();
        assert_eq!(class_counts(a.events(&a.plan.phases[0].ids)), (350, 3500));
        let b = assemble_strategy(StrategySpec::new(Strategy::SynthMix { percent: 100 }, TrainingSetting::Balanced), &f, &s, &syn, &opts, 1)
            .unwrap();
        assert_eq!(class_counts(b.events(&b.plan.phases[0].ids)), (280, 280));
        assert_eq!(b.plan.phases[0].class_weights, ClassWeights::unit());
    }

    #[test]
    fn insufficient_synthetic_pool_reports_required_count() {
        let (f, s, _) = setup();
        let spec = StrategySpec::new(Strategy::SynthMix { percent: 100 }, TrainingSetting::Unaugmented);
        match assemble_strategy(spec, &f, &s, &synthetic(10), &Default::default(), 1) {
            Err(Error::InsufficientSynthetic { required, available }) => assert_eq!((required, available), (70, 10)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pretrain_two_phases_of_thirty() {
        let (f, s, _) = setup();
        let syn = synthetic(60);
        let a = assemble_strategy(StrategySpec::new(Strategy::Pretrain, TrainingSetting::Unaugmented), &f, &s, &syn, &Default::default(), 2)
            .unwrap();
        assert_eq!(a.plan.phases.len(), 2);
        assert_eq!(a.plan.phases.iter().map(|p| p.epochs).collect::<Vec<_>>(), [30, 30]);
        assert_eq!(a.plan.total_epochs(), 60);
        let (t, fa) = class_counts(a.events(&a.plan.phases[0].ids));
        assert_eq!((t, fa), (300, 300));
        assert_eq!(n_synthetic(&a, 0), 300);
        assert_eq!(n_synthetic(&a, 1), 0);
        assert_eq!(class_counts(a.events(&a.plan.phases[1].ids)), (140, 140));
    }

    #[test]
    fn pretrain_tops_up_false_events_with_shifts() {
        let f = field(30, 40);
        let s = split(&f, SplitRatios::default(), 0).unwrap();
        let a = assemble_strategy(StrategySpec::new(Strategy::Pretrain, TrainingSetting::Balanced), &f, &s, &synthetic(20), &Default::default(), 0)
            .unwrap();
        // 100 synthetic after augmentation, 28 false originals in train
        let (t, fa) = class_counts(a.events(&a.plan.phases[0].ids));
        assert_eq!((t, fa), (100, 100));
    }

    #[test]
    fn held_out_sets_are_shared_and_field_only() {
        let (f, s, syn) = setup();
        let mut test_sets = Vec::new();
        for strategy in [Strategy::FieldOnly, Strategy::SynthMix { percent: 50 }, Strategy::Pretrain] {
            for setting in TrainingSetting::ALL {
                let a = assemble_strategy(StrategySpec::new(strategy, setting), &f, &s, &syn, &Default::default(), 9).unwrap();
                assert!(a
                    .events(&a.plan.val_ids)
                    .chain(a.events(&a.plan.test_ids))
                    .all(|e| e.provenance == Provenance::Field && !e.is_augmented()));
                test_sets.push(a.plan.test_ids.clone());
            }
        }
        assert!(test_sets.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn plan_manifest_round_trips() {
        let (f, s, syn) = setup();
        let a = assemble_strategy(StrategySpec::new(Strategy::SynthMix { percent: 25 }, TrainingSetting::Balanced), &f, &s, &syn, &Default::default(), 3)
            .unwrap();
        let back: TrainingPlan = serde_json::from_str(&a.plan.to_json().unwrap()).unwrap();
        assert_eq!(back, a.plan);
        assert_eq!(back.strategy_name, "synth25_balanced");
    }
}
