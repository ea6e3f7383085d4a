use rayon::prelude::*;

use super::{simulate_impact, ImpactConfig, SimOutput, SurrogateParams};
use crate::error::{Error, Result};
use crate::signals::{find_trigger, window_event, KinematicSignal, RawRecording, SAMPLE_RATE_HZ, STANDARD_GRAVITY};

/// Means of consecutive non-overlapping blocks of `factor` samples; a
/// trailing partial block is dropped.
pub fn boxcar_decimate(series: &[f64], factor: usize) -> Vec<f64> {
    assert!(factor > 0, "decimation factor must be positive");
    series
        .chunks_exact(factor)
        .map(|c| c.iter().sum::<f64>() / factor as f64)
        .collect()
}

/// Converts a simulation to a mouthguard-style event: 1 ms boxcar means,
/// trigger on the first 10 g sample, window with zero padding.
pub fn to_mouthguard_event(sim: &SimOutput) -> Result<KinematicSignal> {
    let per_ms = 1.0 / (SAMPLE_RATE_HZ * sim.dt);
    let factor = per_ms.round() as usize;
    if factor == 0 || (per_ms - factor as f64).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "simulation step {} s does not divide 1 ms",
            sim.dt
        )));
    }
    let lin_g = [0, 1, 2].map(|a| {
        boxcar_decimate(&sim.lin_acc_cg[a], factor)
            .into_iter()
            .map(|v| v / STANDARD_GRAVITY)
            .collect::<Vec<_>>()
    });
    let vel = [0, 1, 2].map(|a| boxcar_decimate(&sim.ang_vel[a], factor));
    let recording = RawRecording::new(lin_g, vel, SAMPLE_RATE_HZ, SAMPLE_RATE_HZ)?;
    let trigger = find_trigger(&recording).map_err(|e| match e {
        Error::NoTrigger { threshold_g, peak_g } => Error::BelowTrigger { threshold_g, peak_g },
        other => other,
    })?;
    window_event(&recording, trigger)
}

/// A swept configuration and its exported event.
#[derive(Debug, Clone)]
pub struct SimulatedEvent {
    pub config: ImpactConfig,
    pub signal: KinematicSignal,
    /// Peak of the full-rate simulation, in g.
    pub peak_lin_acc_g: f64,
}

pub fn simulate_event(config: &ImpactConfig, params: &SurrogateParams) -> Result<SimulatedEvent> {
    let sim = simulate_impact(config, params)?;
    Ok(SimulatedEvent {
        config: *config,
        signal: to_mouthguard_event(&sim)?,
        peak_lin_acc_g: sim.peak_lin_acc() / STANDARD_GRAVITY,
    })
}

/// Simulates every configuration in parallel; results keep the input order.
pub fn simulate_sweep(configs: &[ImpactConfig], params: &SurrogateParams) -> Vec<Result<SimulatedEvent>> {
    configs.par_iter().map(|c| simulate_event(c, params)).collect()
}
