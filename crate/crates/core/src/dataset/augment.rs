use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledEvent;
use crate::error::{Error, Result};
use crate::signals::DerivativeScheme;

/// Largest admissible time shift in milliseconds (= samples at 1 kHz).
pub const MAX_SHIFT_MS: usize = 5;

/// How an augmentation factor counts the original signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorSemantics {
    /// Factor k yields k signals in total: the original plus k - 1 shifts.
    #[default]
    IncludesOriginal,
    /// Factor k yields the original plus k shifted copies.
    ExcludesOriginal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub shifts_ms: Vec<usize>,
    pub max_factor: usize,
    pub semantics: FactorSemantics,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            shifts_ms: (1..=MAX_SHIFT_MS).collect(),
            max_factor: 5,
            semantics: FactorSemantics::IncludesOriginal,
        }
    }
}

impl AugmentConfig {
    /// Shifts actually applied after capping to the factor.
    pub fn effective_shifts(&self) -> Result<&[usize]> {
        if let Some(bad) = self.shifts_ms.iter().find(|s| !(1..=MAX_SHIFT_MS).contains(s)) {
            return Err(Error::invalid(format!(
                "time shift {bad} ms outside 1..={MAX_SHIFT_MS} ms"
            )));
        }
        let cap = match self.semantics {
            FactorSemantics::IncludesOriginal => self.max_factor.saturating_sub(1),
            FactorSemantics::ExcludesOriginal => self.max_factor,
        };
        Ok(&self.shifts_ms[..self.shifts_ms.len().min(cap)])
    }
}

/// Original plus right-shifted copies of `event`, at most `max_factor`
/// signals in total. Extra shifts beyond the cap are dropped from the end of
/// `shifts_ms`.
pub fn augment_time_shift(event: &LabeledEvent, shifts_ms: &[usize], max_factor: usize) -> Result<Vec<LabeledEvent>> {
    augment_with(
        event,
        &AugmentConfig {
            shifts_ms: shifts_ms.to_vec(),
            max_factor,
            semantics: FactorSemantics::IncludesOriginal,
        },
    )
}

pub fn augment_with(event: &LabeledEvent, config: &AugmentConfig) -> Result<Vec<LabeledEvent>> {
    let shifts = config.effective_shifts()?;
    let root = event.lineage().to_string();
    let mut out = Vec::with_capacity(shifts.len() + 1);
    out.push(event.clone());
    for &k in shifts {
        out.push(LabeledEvent {
            id: format!("{}+s{k}", event.id),
            signal: Arc::new(event.signal.shifted(k)),
            label: event.label,
            provenance: event.provenance,
            origin_id: Some(root.clone()),
        });
    }
    Ok(out)
}

/// Augments every event by `factor` (total signals per original, shifts
/// 1..factor-1 ms).
pub fn augment_by_factor(events: &[LabeledEvent], factor: usize) -> Result<Vec<LabeledEvent>> {
    if factor == 0 || factor > MAX_SHIFT_MS + 1 {
        return Err(Error::invalid(format!(
            "augmentation factor {factor} outside 1..={}",
            MAX_SHIFT_MS + 1
        )));
    }
    let shifts: Vec<usize> = (1..factor).collect();
    let mut out = Vec::with_capacity(events.len() * factor);
    for e in events {
        out.extend(augment_time_shift(e, &shifts, factor)?);
    }
    Ok(out)
}

/// Adds white Gaussian sensor noise: `lin_std` m/s^2 on linear acceleration
/// and `ang_std` rad/s on angular velocity. Angular acceleration is re-derived
/// from the noisy velocity. Zero deviations return the event unchanged.
pub fn with_sensor_noise<R: Rng>(event: &LabeledEvent, lin_std: f64, ang_std: f64, rng: &mut R) -> Result<LabeledEvent> {
    if lin_std < 0.0 || ang_std < 0.0 || !lin_std.is_finite() || !ang_std.is_finite() {
        return Err(Error::invalid("noise deviations must be finite and non-negative"));
    }
    if lin_std == 0.0 && ang_std == 0.0 {
        return Ok(event.clone());
    }
    let lin_noise = Normal::new(0.0, lin_std).expect("checked");
    let ang_noise = Normal::new(0.0, ang_std).expect("checked");
    let mut lin_draws = [[0.0; crate::signals::WINDOW_LEN]; 3];
    let mut ang_draws = [[0.0; crate::signals::WINDOW_LEN]; 3];
    for axis in 0..3 {
        for i in 0..crate::signals::WINDOW_LEN {
            lin_draws[axis][i] = lin_noise.sample(rng);
            ang_draws[axis][i] = ang_noise.sample(rng);
        }
    }
    let signal = event.signal.map_components(
        |a, i, v| v + lin_draws[a][i],
        |a, i, v| v + ang_draws[a][i],
        Some(DerivativeScheme::Central),
    )?;
    Ok(LabeledEvent {
        signal: Arc::new(signal),
        ..event.clone()
    })
}
