//! Event data model for mouthguard-style kinematic recordings.
//!
//! A mouthguard samples linear acceleration (in g) and angular velocity (in
//! rad/s) on separate clocks. The detector consumes a fixed 6 x 200 window on
//! a common 1 kHz grid: three linear acceleration channels in m/s^2 followed by
//! three angular acceleration channels in rad/s^2, with the 10 g trigger at
//! sample 50 (50 ms of pre-trigger history, 150 ms after).

mod io;

pub use io::{parse_event_file, parse_event_str, write_event_file, write_event_string, EVENT_HEADER};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of detector input channels (3 linear + 3 angular acceleration).
pub const N_CHANNELS: usize = 6;
/// Samples per event window.
pub const WINDOW_LEN: usize = 200;
/// Detector grid rate in Hz.
pub const SAMPLE_RATE_HZ: f64 = 1000.0;
/// Position of the trigger sample inside the window.
pub const TRIGGER_INDEX: usize = 50;
/// Linear acceleration magnitude that fires the trigger.
pub const TRIGGER_THRESHOLD_G: f64 = 10.0;
/// m/s^2 per g.
pub const STANDARD_GRAVITY: f64 = 9.80665;

/// Default native rate of the accelerometer.
pub const DEFAULT_LIN_RATE_HZ: f64 = 1000.0;
/// Default native rate of the gyroscope.
pub const DEFAULT_ANG_RATE_HZ: f64 = 8000.0;

/// Three axes of one window.
pub type Triaxial = [[f64; WINDOW_LEN]; 3];

/// Finite-difference scheme used to turn angular velocity into angular
/// acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeScheme {
    /// Central differences inside, one-sided at both ends.
    #[default]
    Central,
    /// Causal backward differences (forward difference at the first sample).
    Backward,
}

/// Sensor-native recording of one trigger event, before windowing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    lin_acc_g: [Vec<f64>; 3],
    ang_vel_rps: [Vec<f64>; 3],
    lin_rate: f64,
    ang_rate: f64,
}

impl RawRecording {
    pub fn new(
        lin_acc_g: [Vec<f64>; 3],
        ang_vel_rps: [Vec<f64>; 3],
        lin_rate: f64,
        ang_rate: f64,
    ) -> Result<Self> {
        if !(lin_rate > 0.0 && ang_rate > 0.0) || !lin_rate.is_finite() || !ang_rate.is_finite() {
            return Err(Error::invalid(format!(
                "sample rates must be positive (lin {lin_rate} Hz, ang {ang_rate} Hz)"
            )));
        }
        if ang_rate < lin_rate {
            return Err(Error::invalid(format!(
                "angular rate {ang_rate} Hz is below linear rate {lin_rate} Hz"
            )));
        }
        for (name, group) in [("linear acceleration", &lin_acc_g), ("angular velocity", &ang_vel_rps)] {
            let n = group[0].len();
            if group.iter().any(|c| c.len() != n) {
                return Err(Error::invalid(format!("{name} channels differ in length")));
            }
            if n < 2 {
                return Err(Error::invalid(format!("{name} needs at least 2 samples")));
            }
            if group.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(Self {
            lin_acc_g,
            ang_vel_rps,
            lin_rate,
            ang_rate,
        })
    }

    /// Recording at the default mouthguard rates (1000 Hz / 8000 Hz).
    pub fn with_default_rates(lin_acc_g: [Vec<f64>; 3], ang_vel_rps: [Vec<f64>; 3]) -> Result<Self> {
        Self::new(lin_acc_g, ang_vel_rps, DEFAULT_LIN_RATE_HZ, DEFAULT_ANG_RATE_HZ)
    }

    pub fn lin_acc_g(&self) -> &[Vec<f64>; 3] {
        &self.lin_acc_g
    }

    pub fn ang_vel_rps(&self) -> &[Vec<f64>; 3] {
        &self.ang_vel_rps
    }

    pub fn lin_rate(&self) -> f64 {
        self.lin_rate
    }

    pub fn ang_rate(&self) -> f64 {
        self.ang_rate
    }
}

/// One 200 ms detector window at 1 kHz with the trigger at sample 50.
///
/// Angular velocity is kept alongside the derived angular acceleration so a
/// signal can be written back in the sensor-native file format.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicSignal {
    lin_acc: Box<Triaxial>,
    ang_vel: Box<Triaxial>,
    ang_acc: Box<Triaxial>,
}

impl KinematicSignal {
    /// Assembles a signal from already-windowed components.
    pub fn from_parts(lin_acc: Triaxial, ang_vel: Triaxial, ang_acc: Triaxial) -> Result<Self> {
        let signal = Self {
            lin_acc: Box::new(lin_acc),
            ang_vel: Box::new(ang_vel),
            ang_acc: Box::new(ang_acc),
        };
        signal.validate()?;
        Ok(signal)
    }

    /// Builds a signal from windowed linear acceleration (m/s^2) and angular
    /// velocity (rad/s), deriving angular acceleration inside the window.
    pub fn from_kinematics(lin_acc: Triaxial, ang_vel: Triaxial, scheme: DerivativeScheme) -> Result<Self> {
        let mut ang_acc = [[0.0; WINDOW_LEN]; 3];
        for (out, vel) in ang_acc.iter_mut().zip(ang_vel.iter()) {
            let d = differentiate_with(vel, 1.0 / SAMPLE_RATE_HZ, scheme)?;
            out.copy_from_slice(&d);
        }
        Self::from_parts(lin_acc, ang_vel, ang_acc)
    }

    /// All-zero signal.
    pub fn zeros() -> Self {
        Self {
            lin_acc: Box::new([[0.0; WINDOW_LEN]; 3]),
            ang_vel: Box::new([[0.0; WINDOW_LEN]; 3]),
            ang_acc: Box::new([[0.0; WINDOW_LEN]; 3]),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, block) in [
            ("linear acceleration", &self.lin_acc),
            ("angular velocity", &self.ang_vel),
            ("angular acceleration", &self.ang_acc),
        ] {
            if block.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(())
    }

    /// Linear acceleration in m/s^2.
    pub fn lin_acc(&self) -> &Triaxial {
        &self.lin_acc
    }

    /// Angular velocity in rad/s.
    pub fn ang_vel(&self) -> &Triaxial {
        &self.ang_vel
    }

    /// Angular acceleration in rad/s^2.
    pub fn ang_acc(&self) -> &Triaxial {
        &self.ang_acc
    }

    /// Detector channel `i`: 0..3 linear acceleration, 3..6 angular acceleration.
    pub fn channel(&self, i: usize) -> &[f64; WINDOW_LEN] {
        match i {
            0..=2 => &self.lin_acc[i],
            3..=5 => &self.ang_acc[i - 3],
            _ => panic!("channel index {i} out of range"),
        }
    }

    pub fn channels(&self) -> impl Iterator<Item = &[f64; WINDOW_LEN]> {
        (0..N_CHANNELS).map(move |i| self.channel(i))
    }

    pub const fn sample_rate(&self) -> f64 {
        SAMPLE_RATE_HZ
    }

    pub const fn trigger_index(&self) -> usize {
        TRIGGER_INDEX
    }

    /// Linear acceleration magnitude at sample `i`, in g.
    pub fn lin_magnitude_g(&self, i: usize) -> f64 {
        magnitude([self.lin_acc[0][i], self.lin_acc[1][i], self.lin_acc[2][i]]) / STANDARD_GRAVITY
    }

    pub fn peak_lin_acc_g(&self) -> f64 {
        (0..WINDOW_LEN).map(|i| self.lin_magnitude_g(i)).fold(0.0, f64::max)
    }

    /// Copy delayed by `samples`, zero-filled on the left and truncated on the
    /// right. Applies to every stored component.
    pub fn shifted(&self, samples: usize) -> Self {
        fn shift(block: &Triaxial, k: usize) -> Box<Triaxial> {
            let mut out = Box::new([[0.0; WINDOW_LEN]; 3]);
            if k < WINDOW_LEN {
                for (o, src) in out.iter_mut().zip(block.iter()) {
                    o[k..].copy_from_slice(&src[..WINDOW_LEN - k]);
                }
            }
            out
        }
        Self {
            lin_acc: shift(&self.lin_acc, samples),
            ang_vel: shift(&self.ang_vel, samples),
            ang_acc: shift(&self.ang_acc, samples),
        }
    }

    /// Returns a copy with every component transformed element-wise.
    pub fn map_components(
        &self,
        mut lin: impl FnMut(usize, usize, f64) -> f64,
        mut vel: impl FnMut(usize, usize, f64) -> f64,
        scheme: Option<DerivativeScheme>,
    ) -> Result<Self> {
        let mut lin_acc = *self.lin_acc;
        let mut ang_vel = *self.ang_vel;
        for axis in 0..3 {
            for i in 0..WINDOW_LEN {
                lin_acc[axis][i] = lin(axis, i, lin_acc[axis][i]);
                ang_vel[axis][i] = vel(axis, i, ang_vel[axis][i]);
            }
        }
        match scheme {
            Some(s) => Self::from_kinematics(lin_acc, ang_vel, s),
            None => Self::from_parts(lin_acc, ang_vel, *self.ang_acc),
        }
    }
}

/// Euclidean norm of a 3-vector.
pub fn magnitude(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Linearly interpolates `samples` (taken at `src_rate`) onto a `dst_rate`
/// grid starting at the first sample and spanning the same interval.
pub fn resample_channel(samples: &[f64], src_rate: f64, dst_rate: f64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot resample an empty series"));
    }
    if samples.len() < 2 {
        return Err(Error::invalid("resampling needs at least 2 samples"));
    }
    if !(src_rate > 0.0 && dst_rate > 0.0) || !src_rate.is_finite() || !dst_rate.is_finite() {
        return Err(Error::invalid(format!(
            "sample rates must be positive and finite (src {src_rate}, dst {dst_rate})"
        )));
    }
    if src_rate == dst_rate {
        return Ok(samples.to_vec());
    }
    let last = samples.len() - 1;
    let span = last as f64 / src_rate;
    // Guard against 2.9999999 style grid counts.
    let n_out = (span * dst_rate + 1e-9).floor() as usize + 1;
    let ratio = src_rate / dst_rate;
    let out = (0..n_out)
        .map(|k| {
            let pos = k as f64 * ratio;
            let i = (pos.floor() as usize).min(last);
            if i >= last {
                return samples[last];
            }
            let frac = pos - i as f64;
            if frac <= 0.0 {
                samples[i]
            } else {
                samples[i] + (samples[i + 1] - samples[i]) * frac
            }
        })
        .collect();
    Ok(out)
}

/// Central-difference derivative, one-sided at the endpoints.
pub fn differentiate(series: &[f64], dt: f64) -> Result<Vec<f64>> {
    differentiate_with(series, dt, DerivativeScheme::Central)
}

pub fn differentiate_with(series: &[f64], dt: f64, scheme: DerivativeScheme) -> Result<Vec<f64>> {
    if series.len() < 3 {
        return Err(Error::invalid(format!(
            "differentiation needs at least 3 samples, got {}",
            series.len()
        )));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let n = series.len();
    let mut out = Vec::with_capacity(n);
    match scheme {
        DerivativeScheme::Central => {
            out.push((series[1] - series[0]) / dt);
            out.extend(series.windows(3).map(|w| (w[2] - w[0]) / (2.0 * dt)));
            out.push((series[n - 1] - series[n - 2]) / dt);
        }
        DerivativeScheme::Backward => {
            out.push((series[1] - series[0]) / dt);
            out.extend(series.windows(2).map(|w| (w[1] - w[0]) / dt));
        }
    }
    Ok(out)
}

/// Options for cutting an event out of a raw recording.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowOptions {
    pub derivative: DerivativeScheme,
}

/// Index of the first 1 kHz sample whose linear acceleration magnitude
/// reaches the trigger threshold.
pub fn find_trigger(recording: &RawRecording) -> Result<usize> {
    let lin = lin_on_grid(recording)?;
    first_crossing(&lin).ok_or_else(|| no_trigger(&lin))
}

fn no_trigger(lin_g: &[Vec<f64>; 3]) -> Error {
    Error::NoTrigger {
        threshold_g: TRIGGER_THRESHOLD_G,
        peak_g: (0..lin_g[0].len())
            .map(|i| magnitude([lin_g[0][i], lin_g[1][i], lin_g[2][i]]))
            .fold(0.0, f64::max),
    }
}

fn first_crossing(lin_g: &[Vec<f64>; 3]) -> Option<usize> {
    (0..lin_g[0].len()).find(|&i| magnitude([lin_g[0][i], lin_g[1][i], lin_g[2][i]]) >= TRIGGER_THRESHOLD_G)
}

fn lin_on_grid(recording: &RawRecording) -> Result<[Vec<f64>; 3]> {
    let mut out: [Vec<f64>; 3] = Default::default();
    for (o, c) in out.iter_mut().zip(recording.lin_acc_g.iter()) {
        *o = resample_channel(c, recording.lin_rate, SAMPLE_RATE_HZ)?;
    }
    Ok(out)
}

/// Cuts `series` to the detector window centred on `trigger`, zero-padding
/// whatever the series does not cover.
pub fn window_series(series: &[f64], trigger: usize) -> [f64; WINDOW_LEN] {
    let mut out = [0.0; WINDOW_LEN];
    for (j, o) in out.iter_mut().enumerate() {
        let src = trigger as isize - TRIGGER_INDEX as isize + j as isize;
        if src >= 0 && (src as usize) < series.len() {
            *o = series[src as usize];
        }
    }
    out
}

/// Windows `recording` around `trigger_sample` (a 1 kHz index) with default
/// options.
pub fn window_event(recording: &RawRecording, trigger_sample: usize) -> Result<KinematicSignal> {
    window_event_with(recording, trigger_sample, WindowOptions::default())
}

/// Windows a recording: angular velocity is resampled to 1 kHz, then
/// differentiated over the whole recording, then every component is cut to
/// the window and linear acceleration is converted from g to m/s^2.
pub fn window_event_with(
    recording: &RawRecording,
    trigger_sample: usize,
    options: WindowOptions,
) -> Result<KinematicSignal> {
    let lin = lin_on_grid(recording)?;
    match first_crossing(&lin) {
        None => return Err(no_trigger(&lin)),
        Some(first) if first != trigger_sample => {
            return Err(Error::invalid(format!(
                "trigger sample {trigger_sample} is not the first {TRIGGER_THRESHOLD_G} g crossing ({first})"
            )))
        }
        Some(_) => {}
    }

    let mut lin_acc = [[0.0; WINDOW_LEN]; 3];
    let mut ang_vel = [[0.0; WINDOW_LEN]; 3];
    let mut ang_acc = [[0.0; WINDOW_LEN]; 3];
    for axis in 0..3 {
        let w = window_series(&lin[axis], trigger_sample);
        for (o, v) in lin_acc[axis].iter_mut().zip(w) {
            *o = v * STANDARD_GRAVITY;
        }
        let vel = resample_channel(&recording.ang_vel_rps[axis], recording.ang_rate, SAMPLE_RATE_HZ)?;
        let acc = if vel.len() >= 3 {
            differentiate_with(&vel, 1.0 / SAMPLE_RATE_HZ, options.derivative)?
        } else {
            vec![0.0; vel.len()]
        };
        ang_vel[axis] = window_series(&vel, trigger_sample);
        ang_acc[axis] = window_series(&acc, trigger_sample);
    }
    KinematicSignal::from_parts(lin_acc, ang_vel, ang_acc)
}

/// Finds the trigger and windows the recording in one step.
pub fn extract_event(recording: &RawRecording, options: WindowOptions) -> Result<KinematicSignal> {
    let trigger = find_trigger(recording)?;
    window_event_with(recording, trigger, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn recording_with_lin(lin_x_g: Vec<f64>) -> RawRecording {
        let n = lin_x_g.len();
        RawRecording::with_default_rates(
            [lin_x_g, vec![0.0; n], vec![0.0; n]],
            [vec![0.0; 8 * n], vec![0.0; 8 * n], vec![0.0; 8 * n]],
        )
        .unwrap()
    }

    #[test]
    fn resample_constant_stays_constant() {
        let out = resample_channel(&[5.0; 4], 8000.0, 1000.0).unwrap();
        assert!(out.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn resample_short_ramp_has_single_grid_point() {
        let ramp: Vec<f64> = (0..8).map(f64::from).collect();
        assert_eq!(resample_channel(&ramp, 8000.0, 1000.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn resample_sinusoid_matches_analytic() {
        let f = 10.0;
        let src: Vec<f64> = (0..8000).map(|i| (2.0 * PI * f * i as f64 / 8000.0).sin()).collect();
        let out = resample_channel(&src, 8000.0, 1000.0).unwrap();
        assert_eq!(out.len(), 1000);
        for (k, v) in out.iter().enumerate() {
            let exact = (2.0 * PI * f * k as f64 / 1000.0).sin();
            assert!((v - exact).abs() <= 1e-3 * exact.abs().max(1e-3), "k={k}");
        }
    }

    #[test]
    fn resample_upsampling_keeps_endpoints() {
        let out = resample_channel(&[1.0, 3.0], 1000.0, 4000.0).unwrap();
        assert_eq!(out, vec![1.0, 1.5, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn resample_rejects_bad_input() {
        assert!(matches!(resample_channel(&[], 1.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(resample_channel(&[1.0, 2.0], 0.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(resample_channel(&[1.0, 2.0], 1.0, -5.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn differentiate_constant_and_linear() {
        assert!(differentiate(&[2.0; 10], 1e-3).unwrap().iter().all(|&v| v == 0.0));
        let dt = 1e-3;
        let ramp: Vec<f64> = (0..20).map(|i| 3.0 * i as f64 * dt).collect();
        for v in differentiate(&ramp, dt).unwrap() {
            assert!((v - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn differentiate_sine_interior() {
        let dt = 1e-3;
        let w = 2.0 * PI * 10.0;
        let s: Vec<f64> = (0..200).map(|i| (w * i as f64 * dt).sin()).collect();
        let d = differentiate(&s, dt).unwrap();
        for i in 1..199 {
            let exact = w * (w * i as f64 * dt).cos();
            // relative to the derivative amplitude near zero crossings of cos
            assert!((d[i] - exact).abs() <= 1e-2 * exact.abs().max(w * 0.05), "i={i}");
        }
    }

    #[test]
    fn differentiate_needs_three_samples() {
        assert!(matches!(differentiate(&[1.0, 2.0], 1e-3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn backward_scheme_is_causal() {
        let d = differentiate_with(&[0.0, 1.0, 3.0, 6.0], 1.0, DerivativeScheme::Backward).unwrap();
        assert_eq!(d, vec![1.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn magnitude_examples() {
        assert_eq!(magnitude([3.0, 4.0, 0.0]), 5.0);
        assert_eq!(magnitude([0.0, 0.0, 0.0]), 0.0);
    }

    proptest! {
        #[test]
        fn magnitude_matches_sum_of_squares(x in -1e3..1e3f64, y in -1e3..1e3f64, z in -1e3..1e3f64) {
            let reference = [x, y, z].iter().map(|v| v.powi(2)).sum::<f64>().sqrt();
            prop_assert!((magnitude([x, y, z]) - reference).abs() <= 1e-12 * reference.max(1.0));
        }

        #[test]
        fn resample_is_exact_on_affine(a in -10.0..10.0f64, b in -100.0..100.0f64, n in 16usize..400) {
            let src: Vec<f64> = (0..n).map(|i| a + b * i as f64 / 8000.0).collect();
            let out = resample_channel(&src, 8000.0, 1000.0).unwrap();
            for (k, v) in out.iter().enumerate() {
                let exact = a + b * k as f64 / 1000.0;
                prop_assert!((v - exact).abs() <= 1e-9 * (1.0 + exact.abs()));
            }
        }

        #[test]
        fn differentiate_is_exact_on_affine(a in -10.0..10.0f64, b in -100.0..100.0f64, n in 3usize..300) {
            let dt = 1e-3;
            let s: Vec<f64> = (0..n).map(|i| a + b * i as f64 * dt).collect();
            for v in differentiate(&s, dt).unwrap() {
                prop_assert!((v - b).abs() <= 1e-7 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn spike_lands_on_trigger_index() {
        let mut lin = vec![0.0; 400];
        lin[80] = 12.0;
        let rec = recording_with_lin(lin);
        assert_eq!(find_trigger(&rec).unwrap(), 80);
        let sig = window_event(&rec, 80).unwrap();
        assert!((sig.lin_acc()[0][TRIGGER_INDEX] - 12.0 * STANDARD_GRAVITY).abs() < 1e-9);
        assert_eq!(sig.lin_acc()[0].iter().filter(|v| **v != 0.0).count(), 1);
        assert!(sig.lin_magnitude_g(TRIGGER_INDEX) >= TRIGGER_THRESHOLD_G);
    }

    #[test]
    fn quiet_recording_has_no_trigger() {
        let rec = recording_with_lin(vec![9.99; 300]);
        assert!(matches!(find_trigger(&rec), Err(Error::NoTrigger { .. })));
        assert!(matches!(window_event(&rec, 10), Err(Error::NoTrigger { .. })));
    }

    #[test]
    fn window_rejects_wrong_trigger() {
        let mut lin = vec![0.0; 300];
        lin[100] = 20.0;
        let rec = recording_with_lin(lin);
        assert!(matches!(window_event(&rec, 99), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn short_recording_is_zero_padded() {
        let mut lin = vec![0.0; 60];
        lin[10] = 15.0;
        let rec = recording_with_lin(lin);
        let sig = window_event(&rec, 10).unwrap();
        // samples before the recording start and after its end are zero
        assert!(sig.lin_acc()[0][..40].iter().all(|&v| v == 0.0));
        assert!(sig.lin_acc()[0][100..].iter().all(|&v| v == 0.0));
        assert!(sig.lin_acc()[0][TRIGGER_INDEX] > 0.0);
    }

    #[test]
    fn half_sine_pulse_peak_survives_resample_and_window() {
        // 20 ms half-sine, 30 g / 25 rad/s peak, starting at 100 ms
        let lin: Vec<f64> = (0..400)
            .map(|i| {
                let t = i as f64 / 1000.0 - 0.1;
                if (0.0..=0.02).contains(&t) { 30.0 * (PI * t / 0.02).sin() } else { 0.0 }
            })
            .collect();
        let vel: Vec<f64> = (0..3200)
            .map(|i| {
                let t = i as f64 / 8000.0 - 0.1;
                if (0.0..=0.02).contains(&t) { 25.0 * (PI * t / 0.02).sin() } else { 0.0 }
            })
            .collect();
        let rec = RawRecording::with_default_rates(
            [lin, vec![0.0; 400], vec![0.0; 400]],
            [vel, vec![0.0; 3200], vec![0.0; 3200]],
        )
        .unwrap();
        let sig = extract_event(&rec, WindowOptions::default()).unwrap();
        let peak_lin = sig.lin_acc()[0].iter().cloned().fold(0.0, f64::max) / STANDARD_GRAVITY;
        let peak_vel = sig.ang_vel()[0].iter().cloned().fold(0.0, f64::max);
        assert!((peak_lin - 30.0).abs() <= 0.02 * 30.0);
        assert!((peak_vel - 25.0).abs() <= 0.02 * 25.0);
    }

    #[test]
    fn shift_delays_and_zero_fills() {
        let mut lin = [[0.0; WINDOW_LEN]; 3];
        let mut vel = [[0.0; WINDOW_LEN]; 3];
        for i in 0..WINDOW_LEN {
            lin[0][i] = i as f64 + 1.0;
            vel[2][i] = (i as f64 * 0.1).sin();
        }
        let s = KinematicSignal::from_kinematics(lin, vel, DerivativeScheme::Central).unwrap();
        let t = s.shifted(2);
        for c in 0..N_CHANNELS {
            assert_eq!(t.channel(c)[0], 0.0);
            assert_eq!(t.channel(c)[1], 0.0);
            for i in 2..WINDOW_LEN {
                assert_eq!(t.channel(c)[i], s.channel(c)[i - 2]);
            }
        }
    }

    #[test]
    fn raw_recording_invariants() {
        let ok = [vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]];
        let ang = [vec![0.0; 32], vec![0.0; 32], vec![0.0; 32]];
        assert!(RawRecording::new(ok.clone(), ang.clone(), 1000.0, 500.0).is_err());
        assert!(RawRecording::new(ok.clone(), ang.clone(), 0.0, 8000.0).is_err());
        let ragged = [vec![0.0; 4], vec![0.0; 3], vec![0.0; 4]];
        assert!(RawRecording::new(ragged, ang, 1000.0, 8000.0).is_err());
    }
}
