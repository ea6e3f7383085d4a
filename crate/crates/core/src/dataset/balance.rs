use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{augment_by_factor, class_counts, Label, LabeledEvent};
use crate::error::{Error, Result};

/// Non-negative rational in lowest terms.
///
/// Class weights are kept exact so that `w_true * N_true == w_false * N_false`
/// holds without rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(Error::invalid("ratio with zero denominator"));
        }
        let g = gcd(num, den).max(1);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `self * n`, exact.
    pub fn times(self, n: u64) -> Ratio {
        let g = gcd(n, self.den).max(1);
        Ratio {
            num: self.num * (n / g),
            den: self.den / g,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Per-class loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w_true: Ratio,
    pub w_false: Ratio,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self::unit()
    }
}

impl ClassWeights {
    pub const fn unit() -> Self {
        Self {
            w_true: Ratio::ONE,
            w_false: Ratio::ONE,
        }
    }

    /// Inverse-frequency weights `N / (2 N_c)`.
    pub fn inverse_frequency(n_true: usize, n_false: usize) -> Result<Self> {
        if n_true == 0 || n_false == 0 {
            return Err(Error::InsufficientData(format!(
                "class weights need both classes, found {n_true} true / {n_false} false"
            )));
        }
        let total = (n_true + n_false) as u64;
        Ok(Self {
            w_true: Ratio::new(total, 2 * n_true as u64)?,
            w_false: Ratio::new(total, 2 * n_false as u64)?,
        })
    }

    pub fn get(&self, label: Label) -> Ratio {
        match label {
            Label::TrueImpact => self.w_true,
            Label::FalseImpact => self.w_false,
        }
    }

    /// Weights indexed by class index.
    pub fn as_array(&self) -> [f64; 2] {
        let mut w = [0.0; 2];
        w[Label::TrueImpact.class_index()] = self.w_true.value();
        w[Label::FalseImpact.class_index()] = self.w_false.value();
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_true.num == 0 || self.w_false.num == 0 || self.w_true.den == 0 || self.w_false.den == 0 {
            return Err(Error::invalid(format!(
                "class weights must be strictly positive, got {} / {}",
                self.w_true, self.w_false
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancePolicy {
    /// Events unchanged, unit weights.
    None,
    /// Majority class randomly reduced to the minority count.
    Undersample,
    /// Events unchanged, inverse-frequency weights.
    ClassWeights,
    /// Minority augmented by the given factor, then the majority undersampled.
    AugmentFactor(usize),
}

/// Applies `policy` and returns the resulting events and loss weights.
///
/// Kept events retain their input order. On equal counts the true class is
/// treated as the minority.
pub fn balance(events: &[LabeledEvent], policy: BalancePolicy, seed: u64) -> Result<(Vec<LabeledEvent>, ClassWeights)> {
    let (n_true, n_false) = class_counts(events);
    if n_true == 0 || n_false == 0 {
        return Err(Error::InsufficientData(format!(
            "balancing needs both classes, found {n_true} true / {n_false} false"
        )));
    }
    match policy {
        BalancePolicy::None => Ok((events.to_vec(), ClassWeights::unit())),
        BalancePolicy::ClassWeights => Ok((events.to_vec(), ClassWeights::inverse_frequency(n_true, n_false)?)),
        BalancePolicy::Undersample => Ok((undersample(events, n_true.min(n_false), seed), ClassWeights::unit())),
        BalancePolicy::AugmentFactor(k) => {
            let minority = if n_true <= n_false { Label::TrueImpact } else { Label::FalseImpact };
            let (small, large): (Vec<LabeledEvent>, Vec<LabeledEvent>) =
                events.iter().cloned().partition(|e| e.label == minority);
            let mut out = augment_by_factor(&small, k)?;
            let target = out.len();
            out.extend(undersample(&large, target, seed));
            Ok((out, ClassWeights::unit()))
        }
    }
}

/// Reduces the larger class of `events` to `target` events (no-op if it is
/// already that small); the other class is kept whole.
fn undersample(events: &[LabeledEvent], target: usize, seed: u64) -> Vec<LabeledEvent> {
    let (n_true, n_false) = class_counts(events);
    let majority = if n_true > n_false { Label::TrueImpact } else { Label::FalseImpact };
    let idx: Vec<usize> = events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.label == majority)
        .map(|(i, _)| i)
        .collect();
    if idx.len() <= target {
        return events.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; events.len()];
    for &i in &idx {
        keep[i] = false;
    }
    for j in sample(&mut rng, idx.len(), target) {
        keep[idx[j]] = true;
    }
    events
        .iter()
        .zip(keep)
        .filter_map(|(e, k)| k.then(|| e.clone()))
        .collect()
}
