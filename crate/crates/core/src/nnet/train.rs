use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::Architecture;
use super::forward::{backward, forward, update_running_stats, Mode};
use super::loss::weighted_ce_loss;
use super::model::Model;
use super::optim::{Adam, AdamConfig};
use crate::dataset::{AssembledPlan, Label, LabeledEvent};
use crate::error::{Error, Result};
use crate::metrics::{confusion, report, MetricsReport};
use crate::signals::{KinematicSignal, N_CHANNELS, WINDOW_LEN};

/// Optimizer and loop settings. `epochs` and `class_weights`, when set,
/// override the values carried by each plan phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: Option<usize>,
    pub seed: u64,
    /// Indexed by class (see [`Label::class_index`]).
    pub class_weights: Option<[f64; 2]>,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 64,
            epochs: None,
            seed: 0,
            class_weights: None,
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::invalid("class weights must be positive"));
            }
        }
        self.architecture.validate()?;
        Ok(())
    }
}

/// Network inputs in physical units, `[N, channels, length]`, with class
/// indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples {
    pub x: Vec<f32>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
    pub sample_len: usize,
}

impl Samples {
    pub fn from_raw(x: Vec<f32>, labels: Vec<usize>, sample_len: usize) -> Result<Self> {
        if sample_len == 0 || x.len() != labels.len() * sample_len {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} samples of {sample_len}",
                x.len(),
                labels.len()
            )));
        }
        let ids = (0..labels.len()).map(|i| i.to_string()).collect();
        Ok(Self { x, labels, ids, sample_len })
    }

    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a LabeledEvent>) -> Self {
        let mut s = Self {
            sample_len: N_CHANNELS * WINDOW_LEN,
            ..Self::default()
        };
        for e in events {
            push_signal(&mut s.x, &e.signal);
            s.labels.push(e.label.class_index());
            s.ids.push(e.id.clone());
        }
        s
    }

    /// Unlabelled signals for inference; every label is `FalseImpact`.
    pub fn from_signals(signals: &[KinematicSignal]) -> Self {
        let mut s = Self {
            sample_len: N_CHANNELS * WINDOW_LEN,
            ..Self::default()
        };
        for sig in signals {
            push_signal(&mut s.x, sig);
            s.labels.push(Label::FalseImpact.class_index());
        }
        s
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn gather(&self, idx: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(idx.len() * self.sample_len);
        for &i in idx {
            out.extend_from_slice(&self.x[i * self.sample_len..(i + 1) * self.sample_len]);
        }
        out
    }
}

fn push_signal(out: &mut Vec<f32>, s: &KinematicSignal) {
    for c in s.channels() {
        out.extend(c.iter().map(|v| *v as f32));
    }
}

/// Samples and settings for one training phase.
#[derive(Debug, Clone)]
pub struct TrainPhase {
    pub name: String,
    pub samples: Samples,
    pub class_weights: [f64; 2],
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    /// 1-based across all phases.
    pub epoch: usize,
    /// 1-based within the phase.
    pub phase_epoch: usize,
    pub train_loss: f64,
    pub val: Option<MetricsReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Global epoch whose parameters were returned.
    pub selected_epoch: usize,
}

impl History {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed, |acc, &p| mix(acc ^ mix(p)))
}

/// Splits a shuffled order into batches; a trailing single sample joins
/// the previous batch so batch statistics stay defined.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Trains `model` through `phases` in order. Parameters carry over between
/// phases; the optimizer state does not. With validation data, the returned
/// parameters are those of the final-phase epoch with the highest
/// validation F2 (earliest on ties); otherwise those of the last epoch.
pub fn train(mut model: Model, phases: &[TrainPhase], val: Option<&Samples>, config: &TrainConfig) -> Result<(Model, History)> {
    config.adam.validate()?;
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    if phases.is_empty() {
        return Err(Error::invalid("training needs at least one phase"));
    }
    let sample_len = model.arch().in_channels * model.arch().input_len;
    for p in phases {
        if p.samples.is_empty() {
            return Err(Error::InsufficientData(format!("phase {} has no samples", p.name)));
        }
        if p.samples.sample_len != sample_len {
            return Err(Error::ShapeMismatch(format!("phase {}: sample length {}", p.name, p.samples.sample_len)));
        }
    }
    let mut history = History::default();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut global = 0;
    for (pi, phase) in phases.iter().enumerate() {
        let last_phase = pi + 1 == phases.len();
        let mut adam = Adam::<f32>::new(config.adam, model.weights.len());
        let mut order: Vec<usize> = (0..phase.samples.len()).collect();
        for e in 0..phase.epochs {
            global += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, pi as u64, e as u64]));
            order.sort_unstable();
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for (bi, idx) in batches(&order, config.batch_size).into_iter().enumerate() {
                let x = phase.samples.gather(idx);
                let labels: Vec<usize> = idx.iter().map(|&i| phase.samples.labels[i]).collect();
                let seed = derive_seed(&[config.seed, pi as u64, e as u64, bi as u64, 1]);
                let diverged = Error::Divergence { epoch: global, batch: bi + 1 };
                let trace = forward(&model, &x, idx.len(), Mode::Train { seed }).map_err(|e| match e {
                    Error::NonFinite(_) => diverged,
                    other => other,
                })?;
                let loss = weighted_ce_loss(&trace.probs, &labels, &phase.class_weights)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch: global, batch: bi + 1 });
                }
                let grad = backward(&model, &trace, &labels, phase.class_weights)?;
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Divergence { epoch: global, batch: bi + 1 });
                }
                adam.step(&mut model.weights, &grad);
                update_running_stats(&mut model, &trace);
                loss_sum += loss * idx.len() as f64;
            }
            if model.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Divergence { epoch: global, batch: 0 });
            }
            let train_loss = loss_sum / phase.samples.len() as f64;
            let val_report = match val {
                Some(v) if !v.is_empty() => Some(evaluate(&model, v)?),
                _ => None,
            };
            if last_phase {
                if let Some(r) = &val_report {
                    let f2 = r.f2_or_zero();
                    if best.as_ref().is_none_or(|(b, _, _)| f2 > *b) {
                        best = Some((f2, global, model.clone()));
                    }
                }
            }
            debug!(
                "{} epoch {}/{}: loss {train_loss:.5} val F2 {:?}",
                phase.name,
                e + 1,
                phase.epochs,
                val_report.and_then(|r| r.f2)
            );
            history.epochs.push(EpochRecord {
                phase: phase.name.clone(),
                epoch: global,
                phase_epoch: e + 1,
                train_loss,
                val: val_report,
            });
        }
    }
    let model = match best {
        Some((f2, epoch, m)) => {
            info!("selected epoch {epoch} (val F2 {f2:.4})");
            history.selected_epoch = epoch;
            m
        }
        None => {
            history.selected_epoch = global;
            model
        }
    };
    Ok((model, history))
}

/// Trains a freshly initialised model on an assembled strategy plan.
pub fn fit(plan: &AssembledPlan, config: &TrainConfig) -> Result<(Model, History)> {
    config.validate()?;
    plan.plan.validate()?;
    let phases = plan
        .plan
        .phases
        .iter()
        .map(|p| TrainPhase {
            name: p.name.clone(),
            samples: Samples::from_events(plan.events(&p.ids)),
            class_weights: config.class_weights.unwrap_or_else(|| p.class_weights.as_array()),
            epochs: config.epochs.unwrap_or(p.epochs),
        })
        .collect::<Vec<_>>();
    let val = Samples::from_events(plan.events(&plan.plan.val_ids));
    let model = Model::init(config.architecture.clone(), config.seed)?;
    train(model, &phases, Some(&val), config)
}

const PREDICT_CHUNK: usize = 64;

/// Probability of [`Label::TrueImpact`] for every sample, in order.
pub fn predict_batch(model: &Model, samples: &Samples) -> Result<Vec<f64>> {
    let t = Label::TrueImpact.class_index();
    let nc = model.arch().n_classes;
    let mut out = Vec::with_capacity(samples.len());
    let idx: Vec<usize> = (0..samples.len()).collect();
    for chunk in idx.chunks(PREDICT_CHUNK) {
        let tr = forward(model, &samples.gather(chunk), chunk.len(), Mode::Infer)?;
        out.extend(tr.probs.chunks(nc).map(|row| row[t] as f64));
    }
    Ok(out)
}

/// Label by argmax (ties go to [`Label::FalseImpact`]) and prob_true.
pub fn predict(model: &Model, signal: &KinematicSignal) -> Result<(Label, f64)> {
    let mut x = Vec::with_capacity(N_CHANNELS * WINDOW_LEN);
    push_signal(&mut x, signal);
    let tr = forward(model, &x, 1, Mode::Infer)?;
    let p = tr.probs[Label::TrueImpact.class_index()] as f64;
    let q = tr.probs[Label::FalseImpact.class_index()] as f64;
    Ok((label_from(p, q), p))
}

fn label_from(p_true: f64, p_false: f64) -> Label {
    if p_true > p_false {
        Label::TrueImpact
    } else {
        Label::FalseImpact
    }
}

/// Predicted labels from prob_true values of a binary softmax.
pub fn labels_from_probs(prob_true: &[f64]) -> Vec<Label> {
    prob_true.iter().map(|&p| label_from(p, 1.0 - p)).collect()
}

pub fn evaluate(model: &Model, samples: &Samples) -> Result<MetricsReport> {
    let preds = labels_from_probs(&predict_batch(model, samples)?);
    let truth: Vec<Label> = samples.labels.iter().map(|&l| Label::from_class_index(l)).collect();
    Ok(report(&confusion(&preds, &truth)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn toy_arch() -> Architecture {
        Architecture {
            conv1_filters: 8,
            conv2_filters: 16,
            conv2d_filters: 8,
            input_scale: vec![1.0; 6],
            ..Architecture::default()
        }
    }

    /// Each sample is iid Gaussian noise around a class mean; the means are
    /// 5 sigma apart.
    fn two_gaussians(n: usize, seed: u64) -> Samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let len = 6 * 200;
        let mut x = Vec::with_capacity(n * len);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % 2;
            let mean = if y == 1 { 2.5 } else { -2.5 };
            x.extend((0..len).map(|_| (mean + noise.sample(&mut rng)) as f32));
            labels.push(y);
        }
        Samples::from_raw(x, labels, len).unwrap()
    }

    fn toy_config(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            seed,
            architecture: toy_arch(),
            ..Default::default()
        }
    }

    fn toy_phase(samples: Samples, epochs: usize) -> TrainPhase {
        TrainPhase {
            name: "toy".into(),
            samples,
            class_weights: [1.0, 1.0],
            epochs,
        }
    }

    #[test]
    fn batches_merge_single_tail() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![4, 5]);
        let b = batches(&order, 3);
        assert_eq!(b.len(), 3);
        assert_eq!(batches(&order[..1], 4).len(), 1);
    }

    #[test]
    fn two_gaussian_toy_is_learned() {
        let train_set = two_gaussians(96, 1);
        let test_set = two_gaussians(64, 2);
        let cfg = toy_config(3);
        let model = Model::init(cfg.architecture.clone(), cfg.seed).unwrap();
        let (model, hist) = train(model, &[toy_phase(train_set, 10)], None, &cfg).unwrap();
        assert_eq!(hist.epochs.len(), 10);
        let r = evaluate(&model, &test_set).unwrap();
        assert!(r.accuracy.unwrap() >= 0.95, "{r}");

        // Window-5 moving average of the training loss strictly decreases.
        let l = hist.train_losses();
        let smooth: Vec<f64> = l.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        assert!(smooth.windows(2).all(|w| w[1] < w[0]), "{l:?}");
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let run = || {
            let cfg = toy_config(5);
            let model = Model::init(cfg.architecture.clone(), cfg.seed).unwrap();
            let val = two_gaussians(16, 9);
            train(model, &[toy_phase(two_gaussians(40, 4), 2)], Some(&val), &cfg).unwrap()
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1.weights, m2.weights);
        assert_eq!(m1.buffers, m2.buffers);
    }

    #[test]
    fn phases_run_back_to_back_and_select_from_last() {
        let cfg = toy_config(6);
        let model = Model::init(cfg.architecture.clone(), cfg.seed).unwrap();
        let val = two_gaussians(16, 10);
        let phases = [toy_phase(two_gaussians(20, 7), 2), toy_phase(two_gaussians(20, 8), 3)];
        let (_, hist) = train(model, &phases, Some(&val), &cfg).unwrap();
        assert_eq!(hist.epochs.len(), 5);
        assert_eq!(hist.epochs[2].phase_epoch, 1);
        assert_eq!(hist.epochs[4].epoch, 5);
        assert!((3..=5).contains(&hist.selected_epoch));
        let best = hist.epochs[2..].iter().map(|e| e.val.unwrap().f2_or_zero()).fold(f64::MIN, f64::max);
        let sel = &hist.epochs[hist.selected_epoch - 1];
        assert_eq!(sel.val.unwrap().f2_or_zero(), best);
    }

    #[test]
    fn divergence_reports_epoch_and_batch() {
        let cfg = TrainConfig {
            adam: AdamConfig { lr: 1e30, ..Default::default() },
            ..toy_config(1)
        };
        let model = Model::init(cfg.architecture.clone(), cfg.seed).unwrap();
        let err = train(model, &[toy_phase(two_gaussians(48, 3), 3)], None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch, batch } if epoch >= 1 && batch <= 3), "{err}");
    }

    #[test]
    fn predict_is_deterministic_and_bounded() {
        let model = Model::init(Architecture::default(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lin: [[f64; 200]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-50.0..50.0)));
        let ang: [[f64; 200]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-3000.0..3000.0)));
        let s = KinematicSignal::from_parts(lin, [[0.0; 200]; 3], ang).unwrap();
        let a = predict(&model, &s).unwrap();
        let b = predict(&model, &s).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.1));
    }

    #[test]
    fn shared_logit_shift_keeps_label() {
        let mut model = Model::init(Architecture::reduced(), 2).unwrap();
        let samples = Samples::from_raw((0..4 * 360).map(|i| ((i * 37 % 101) as f32 - 50.0) * 3.0).collect(), vec![0; 4], 360).unwrap();
        let before = labels_from_probs(&predict_batch(&model, &samples).unwrap());
        let r = model.index().dense_b.clone();
        for i in r {
            model.weights[i] += 7.5;
        }
        let after = labels_from_probs(&predict_batch(&model, &samples).unwrap());
        assert_eq!(before, after);
    }
}
