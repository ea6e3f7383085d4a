//! Desk-scale stand-in for a verified field dataset.
//!
//! True events are surrogate simulations at randomly jittered
//! configurations and physical constants, embedded in a longer noisy
//! recording and triggered like a real device. False events come from
//! three invented artifact families:
//!
//! - `chew`: trains of smooth low-frequency bursts along the jaw axis with
//!   little rotation, as from biting or clenching.
//! - `spike`: one to three sample glitches on a single accelerometer axis,
//!   sometimes with a coincident gyroscope glitch.
//! - `drop`: a device dropped on a hard surface: high-frequency decaying
//!   ringing on all axes, a weaker rebound, and a tumbling spin that changes
//!   abruptly at contact.
//!
//! None of these families is fitted to real artifact recordings.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_labels, Label};
use crate::error::{Error, Result};
use crate::nnet::train::derive_seed;
use crate::signals::{extract_event, write_event_string, KinematicSignal, RawRecording, SAMPLE_RATE_HZ, STANDARD_GRAVITY};
use crate::sim::{boxcar_decimate, simulate_impact, ImpactConfig, SurrogateParams};

/// Labels file written next to the events.
pub const LABELS_FILE: &str = "labels.csv";
/// Per-event provenance written next to the events.
pub const SOURCES_FILE: &str = "benchmark.json";

/// Samples of an artifact recording at 1 kHz.
const ARTIFACT_LEN: usize = 400;
/// Quiet padding around a simulated impact, in ms.
const SIM_PAD_MS: usize = 100;
const MAX_DRAWS: usize = 64;

/// Uniform range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::invalid(format!("{name}: invalid range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

/// Spread of the field-style true impacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpactJitter {
    pub alpha_deg: Range,
    pub beta_deg: Range,
    pub z: Range,
    pub v0: Range,
    pub offset: Range,
    /// Multiplicative spread applied to head mass, foam and neck constants.
    pub param_scale: Range,
    /// Largest misalignment of the sensor frame against the head frame.
    pub mount_tilt_deg: f64,
    /// Probability of a loosely fitted device ringing after the impact.
    pub ringing_prob: f64,
    /// Ringing amplitude relative to the impact peak.
    pub ringing_rel: Range,
    pub ringing_hz: Range,
}

impl Default for ImpactJitter {
    fn default() -> Self {
        Self {
            alpha_deg: Range::new(-165.0, -15.0),
            beta_deg: Range::new(-30.0, 30.0),
            z: Range::new(-0.05, 0.06),
            v0: Range::new(1.0, 6.0),
            offset: Range::new(0.005, 0.020),
            param_scale: Range::new(0.7, 1.3),
            mount_tilt_deg: 20.0,
            ringing_prob: 0.3,
            ringing_rel: Range::new(0.1, 0.4),
            ringing_hz: Range::new(150.0, 350.0),
        }
    }
}

/// Parameters of the invented false-event families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactSpec {
    /// Relative frequency of chew, spike and drop events.
    pub mix: [f64; 3],
    pub chew_peak_g: Range,
    pub chew_carrier_hz: Range,
    pub chew_width_ms: Range,
    pub chew_rotation_rps: Range,
    pub chew_max_bursts: usize,
    pub spike_peak_g: Range,
    pub drop_peak_g: Range,
    pub drop_ring_hz: Range,
    /// Share of drops landing on a soft surface, which ring slowly.
    pub drop_soft_prob: f64,
    pub drop_soft_hz: Range,
    pub drop_decay_ms: Range,
    pub drop_spin_rps: Range,
}

impl Default for ArtifactSpec {
    fn default() -> Self {
        Self {
            mix: [0.5, 0.25, 0.25],
            chew_peak_g: Range::new(10.5, 25.0),
            chew_carrier_hz: Range::new(5.0, 30.0),
            chew_width_ms: Range::new(3.0, 15.0),
            chew_rotation_rps: Range::new(0.5, 25.0),
            chew_max_bursts: 4,
            spike_peak_g: Range::new(12.0, 80.0),
            drop_peak_g: Range::new(15.0, 120.0),
            drop_ring_hz: Range::new(60.0, 400.0),
            drop_soft_prob: 0.5,
            drop_soft_hz: Range::new(20.0, 60.0),
            drop_decay_ms: Range::new(2.0, 15.0),
            drop_spin_rps: Range::new(2.0, 40.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub n_true: usize,
    /// False events per true event.
    pub imbalance: usize,
    pub seed: u64,
    /// Accelerometer noise, m/s^2.
    pub lin_noise: f64,
    /// Gyroscope noise, rad/s.
    pub ang_noise: f64,
    pub jitter: ImpactJitter,
    pub artifacts: ArtifactSpec,
    pub params: SurrogateParams,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            n_true: 200,
            imbalance: 10,
            seed: 0,
            lin_noise: 0.5,
            ang_noise: 0.02,
            jitter: ImpactJitter::default(),
            artifacts: ArtifactSpec::default(),
            params: SurrogateParams::default(),
        }
    }
}

impl BenchmarkSpec {
    pub fn n_false(&self) -> usize {
        self.n_true * self.imbalance
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_true == 0 {
            return Err(Error::invalid("benchmark needs at least one true event"));
        }
        if self.imbalance == 0 {
            return Err(Error::invalid("imbalance ratio must be at least 1"));
        }
        if !(self.lin_noise >= 0.0 && self.ang_noise >= 0.0) {
            return Err(Error::invalid("noise levels must be non-negative"));
        }
        let j = &self.jitter;
        for (name, r) in [
            ("alpha_deg", j.alpha_deg),
            ("beta_deg", j.beta_deg),
            ("z", j.z),
            ("v0", j.v0),
            ("offset", j.offset),
            ("param_scale", j.param_scale),
            ("ringing_rel", j.ringing_rel),
            ("ringing_hz", j.ringing_hz),
        ] {
            r.validate(name)?;
        }
        if j.param_scale.lo <= 0.0 {
            return Err(Error::invalid("param_scale must be positive"));
        }
        if !(0.0..=1.0).contains(&j.ringing_prob) || !(0.0..=180.0).contains(&j.mount_tilt_deg) {
            return Err(Error::invalid("ringing_prob must lie in [0, 1] and mount_tilt_deg in [0, 180]"));
        }
        let a = &self.artifacts;
        if !(0.0..=1.0).contains(&a.drop_soft_prob) {
            return Err(Error::invalid("drop_soft_prob must lie in [0, 1]"));
        }
        if a.chew_max_bursts == 0 {
            return Err(Error::invalid("chew_max_bursts must be at least 1"));
        }
        if a.mix.iter().any(|w| !(*w >= 0.0)) || a.mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("artifact mix weights must be non-negative with a positive sum"));
        }
        for (name, r) in [
            ("chew_peak_g", a.chew_peak_g),
            ("chew_carrier_hz", a.chew_carrier_hz),
            ("chew_width_ms", a.chew_width_ms),
            ("chew_rotation_rps", a.chew_rotation_rps),
            ("spike_peak_g", a.spike_peak_g),
            ("drop_peak_g", a.drop_peak_g),
            ("drop_ring_hz", a.drop_ring_hz),
            ("drop_soft_hz", a.drop_soft_hz),
            ("drop_decay_ms", a.drop_decay_ms),
            ("drop_spin_rps", a.drop_spin_rps),
        ] {
            r.validate(name)?;
        }
        for (name, r) in [("chew_peak_g", a.chew_peak_g), ("spike_peak_g", a.spike_peak_g), ("drop_peak_g", a.drop_peak_g)] {
            if r.lo <= crate::signals::TRIGGER_THRESHOLD_G {
                return Err(Error::invalid(format!("{name} must stay above the trigger threshold")));
            }
        }
        self.params.validate()
    }
}

/// Generator family of a benchmark event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Impact,
    Chew,
    Spike,
    Drop,
}

impl Family {
    pub fn label(self) -> Label {
        match self {
            Family::Impact => Label::TrueImpact,
            _ => Label::FalseImpact,
        }
    }
}

/// Contents of [`SOURCES_FILE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSources {
    pub spec: BenchmarkSpec,
    pub n_true: usize,
    pub n_false: usize,
    pub family_counts: BTreeMap<Family, usize>,
    /// Event file name to family.
    pub events: BTreeMap<String, Family>,
}

/// Generated benchmark in memory.
#[derive(Debug, Clone)]
pub struct Benchmark {
    /// `(event file name, family, signal)` in file-name order.
    pub events: Vec<(String, Family, KinematicSignal)>,
}

/// Generates the benchmark events for `spec`. Event names are neutral
/// (`ev00000.csv`...) and assigned in a seeded random order so file names
/// carry no label information.
pub fn build_benchmark(spec: &BenchmarkSpec) -> Result<Benchmark> {
    spec.validate()?;
    let n = spec.n_true + spec.n_false();
    let mut families = vec![Family::Impact; spec.n_true];
    families.extend(artifact_families(spec));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, 0xbe_4c])));

    let signals: Vec<KinematicSignal> = families
        .par_iter()
        .enumerate()
        .map(|(i, &family)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, family as u64, i as u64]));
            match family {
                Family::Impact => field_impact(spec, &mut rng),
                Family::Chew => chew(spec, &mut rng),
                Family::Spike => spike(spec, &mut rng),
                Family::Drop => drop_transient(spec, &mut rng),
            }
        })
        .collect::<Result<_>>()?;

    let width = n.to_string().len().max(5);
    let mut events: Vec<(String, Family, KinematicSignal)> = signals
        .into_iter()
        .zip(families)
        .enumerate()
        .map(|(i, (s, f))| (format!("ev{:0width$}.csv", order[i]), f, s))
        .collect();
    events.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(Benchmark { events })
}

/// Writes a benchmark directory: one event file per event, [`LABELS_FILE`]
/// and [`SOURCES_FILE`]. Equal specs give byte-identical directories.
pub fn generate_benchmark(spec: &BenchmarkSpec, dir: impl AsRef<Path>) -> Result<BenchmarkSources> {
    let dir = dir.as_ref();
    let bench = build_benchmark(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    bench
        .events
        .par_iter()
        .try_for_each(|(name, _, s)| fs::write(dir.join(name), write_event_string(s)).map_err(|e| Error::file(dir.join(name), e)))?;
    write_labels(dir.join(LABELS_FILE), bench.events.iter().map(|(n, f, _)| (n.as_str(), f.label())))?;

    let mut family_counts = BTreeMap::new();
    for (_, f, _) in &bench.events {
        *family_counts.entry(*f).or_insert(0) += 1;
    }
    let sources = BenchmarkSources {
        spec: spec.clone(),
        n_true: spec.n_true,
        n_false: spec.n_false(),
        family_counts,
        events: bench.events.iter().map(|(n, f, _)| (n.clone(), *f)).collect(),
    };
    let path = dir.join(SOURCES_FILE);
    fs::write(&path, serde_json::to_string_pretty(&sources)?).map_err(|e| Error::file(&path, e))?;
    Ok(sources)
}

/// Families of the false events: exact counts from the mix weights, largest
/// remainders first, then shuffled.
fn artifact_families(spec: &BenchmarkSpec) -> Vec<Family> {
    let n = spec.n_false();
    let mix = spec.artifacts.mix;
    let total: f64 = mix.iter().sum();
    let exact: Vec<f64> = mix.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..3).collect();
    by_remainder.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &k in by_remainder.iter().cycle().take(n - counts.iter().sum::<usize>()) {
        counts[k] += 1;
    }
    let mut out: Vec<Family> = [Family::Chew, Family::Spike, Family::Drop]
        .iter()
        .zip(&counts)
        .flat_map(|(f, &c)| std::iter::repeat_n(*f, c))
        .collect();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, 0xfa_11])));
    out
}

fn noise(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("noise deviation is validated")
}

/// Adds sensor noise, then triggers and windows the recording (1 kHz on both
/// sensors).
fn finish<R: Rng>(spec: &BenchmarkSpec, mut lin_g: [Vec<f64>; 3], mut ang: [Vec<f64>; 3], rng: &mut R) -> Result<KinematicSignal> {
    let lin_n = noise(spec.lin_noise / STANDARD_GRAVITY);
    let ang_n = noise(spec.ang_noise);
    for c in &mut lin_g {
        c.iter_mut().for_each(|v| *v += lin_n.sample(rng));
    }
    for c in &mut ang {
        c.iter_mut().for_each(|v| *v += ang_n.sample(rng));
    }
    extract_event(&RawRecording::new(lin_g, ang, SAMPLE_RATE_HZ, SAMPLE_RATE_HZ)?, Default::default())
}

fn field_impact<R: Rng>(spec: &BenchmarkSpec, rng: &mut R) -> Result<KinematicSignal> {
    let j = &spec.jitter;
    let factor = (1.0 / (SAMPLE_RATE_HZ * spec.params.dt)).round() as usize;
    let mut last_peak = 0.0;
    for _ in 0..MAX_DRAWS {
        let config = ImpactConfig {
            alpha_deg: j.alpha_deg.sample(rng).clamp(-179.0, -1.0),
            beta_deg: j.beta_deg.sample(rng).clamp(-30.0, 30.0),
            z: j.z.sample(rng),
            v0: j.v0.sample(rng),
            offset: j.offset.sample(rng).clamp(0.005, 0.020),
        };
        let mut params = spec.params.clone();
        params.m_head *= j.param_scale.sample(rng);
        params.k_foam *= j.param_scale.sample(rng);
        params.k_neck *= j.param_scale.sample(rng);
        params.c_neck *= j.param_scale.sample(rng);
        let sim = simulate_impact(&config, &params)?;
        let pad = vec![0.0; SIM_PAD_MS];
        let embed = |series: Vec<f64>| -> Vec<f64> { pad.iter().copied().chain(series).chain(pad.iter().copied()).collect() };
        let mut lin_g = [0, 1, 2].map(|a| embed(boxcar_decimate(&sim.lin_acc_cg[a], factor).into_iter().map(|v| v / STANDARD_GRAVITY).collect()));
        // The head keeps its final angular velocity past the end of the
        // simulation; pad with the last sample rather than zero.
        let mut ang = [0, 1, 2].map(|a| {
            let v = boxcar_decimate(&sim.ang_vel[a], factor);
            let last = v.last().copied().unwrap_or(0.0);
            let mut out = vec![0.0; SIM_PAD_MS];
            out.extend(v);
            out.extend(std::iter::repeat_n(last, SIM_PAD_MS));
            out
        });
        if rng.random_bool(j.ringing_prob) {
            add_ringing(&mut lin_g, j, rng);
        }
        let r = rotation(random_unit(rng), j.mount_tilt_deg.to_radians() * rng.random::<f64>());
        rotate(&mut lin_g, &r);
        rotate(&mut ang, &r);
        match finish(spec, lin_g, ang, rng) {
            Ok(s) => return Ok(s),
            Err(Error::NoTrigger { peak_g, .. }) => last_peak = peak_g,
            Err(e) => return Err(e),
        }
    }
    Err(Error::BelowTrigger {
        threshold_g: crate::signals::TRIGGER_THRESHOLD_G,
        peak_g: last_peak,
    })
}

/// Decaying oscillation of a loose device, starting at the impact peak.
fn add_ringing<R: Rng>(lin: &mut [Vec<f64>; 3], j: &ImpactJitter, rng: &mut R) {
    let mag = |i: usize| (lin[0][i].powi(2) + lin[1][i].powi(2) + lin[2][i].powi(2)).sqrt();
    let Some((at, peak)) = (0..lin[0].len()).map(|i| (i, mag(i))).max_by(|a, b| a.1.total_cmp(&b.1)) else {
        return;
    };
    let amp = peak * j.ringing_rel.sample(rng);
    let f = j.ringing_hz.sample(rng);
    let decay = rng.random_range(3.0..8.0);
    let dir = random_unit(rng);
    for i in at..lin[0].len() {
        let t = (i - at) as f64;
        let v = amp * (-t / decay).exp() * (2.0 * PI * f * t / 1000.0).sin();
        for k in 0..3 {
            lin[k][i] += v * dir[k];
        }
    }
}

/// Rotation by `angle` about the unit `axis` (Rodrigues).
fn rotation(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let [x, y, z] = axis;
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

fn rotate(v: &mut [Vec<f64>; 3], r: &[[f64; 3]; 3]) {
    for i in 0..v[0].len() {
        let p = [v[0][i], v[1][i], v[2][i]];
        for k in 0..3 {
            v[k][i] = r[k][0] * p[0] + r[k][1] * p[1] + r[k][2] * p[2];
        }
    }
}

/// Rescales the linear channels so their peak magnitude equals `peak_g`.
fn scale_to_peak(lin: &mut [Vec<f64>; 3], peak_g: f64) {
    let peak = (0..lin[0].len())
        .map(|i| (lin[0][i].powi(2) + lin[1][i].powi(2) + lin[2][i].powi(2)).sqrt())
        .fold(0.0, f64::max);
    if peak > 0.0 {
        let s = peak_g / peak;
        lin.iter_mut().flatten().for_each(|v| *v *= s);
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> [f64; 3] {
    UnitSphere.sample(rng)
}

fn chew<R: Rng>(spec: &BenchmarkSpec, rng: &mut R) -> Result<KinematicSignal> {
    let a = &spec.artifacts;
    let mut lin = [0, 1, 2].map(|_| vec![0.0; ARTIFACT_LEN]);
    let mut ang = [0, 1, 2].map(|_| vec![0.0; ARTIFACT_LEN]);
    // Mostly along the vertical jaw axis.
    let dir = {
        let v = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0];
        let n = (v[0] * v[0] + v[1] * v[1] + 1.0f64).sqrt();
        v.map(|c| c / n)
    };
    let n_bursts = rng.random_range(1..=a.chew_max_bursts);
    let carrier = a.chew_carrier_hz.sample(rng);
    let rot = a.chew_rotation_rps.sample(rng);
    let rot_axis = {
        let v = [rng.random_range(-0.3..0.3), 1.0, rng.random_range(-0.3..0.3)];
        let n = (v[0] * v[0] + 1.0f64 + v[2] * v[2]).sqrt();
        v.map(|c| c / n)
    };
    let mut centre = rng.random_range(100.0..130.0);
    for b in 0..n_bursts {
        let width = a.chew_width_ms.sample(rng);
        let amp = if b == 0 { 1.0 } else { rng.random_range(0.5..1.0) };
        let phase = rng.random_range(0.0..2.0 * PI);
        for (i, _) in (0..ARTIFACT_LEN).enumerate() {
            let t = i as f64 - centre;
            let env = amp * (-0.5 * (t / width).powi(2)).exp();
            let osc = (2.0 * PI * carrier * t / 1000.0 + phase).cos();
            for k in 0..3 {
                lin[k][i] += env * osc * dir[k];
            }
            // Jaw rotation, mostly about the lateral axis.
            let w = rot * env * (2.0 * PI * carrier * t / 1000.0 + phase).sin();
            for k in 0..3 {
                ang[k][i] += w * rot_axis[k];
            }
        }
        centre += rng.random_range(40.0..90.0);
    }
    scale_to_peak(&mut lin, a.chew_peak_g.sample(rng));
    finish(spec, lin, ang, rng)
}

fn spike<R: Rng>(spec: &BenchmarkSpec, rng: &mut R) -> Result<KinematicSignal> {
    let a = &spec.artifacts;
    let mut lin = [0, 1, 2].map(|_| vec![0.0; ARTIFACT_LEN]);
    let mut ang = [0, 1, 2].map(|_| vec![0.0; ARTIFACT_LEN]);
    let axis = rng.random_range(0..3);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let at = rng.random_range(80..150);
    let width = rng.random_range(1..=3);
    for i in at..at + width {
        lin[axis][i] = sign * rng.random_range(0.6..1.0);
    }
    lin[axis][at] = sign;
    if rng.random_bool(0.3) {
        let later = at + rng.random_range(10..60);
        lin[axis][later] = -sign * rng.random_range(0.2..0.6);
    }
    if rng.random_bool(0.3) {
        let g = rng.random_range(0..3);
        for i in at..at + width {
            ang[g][i] = rng.random_range(-10.0..10.0);
        }
    }
    scale_to_peak(&mut lin, a.spike_peak_g.sample(rng));
    finish(spec, lin, ang, rng)
}

fn drop_transient<R: Rng>(spec: &BenchmarkSpec, rng: &mut R) -> Result<KinematicSignal> {
    let a = &spec.artifacts;
    let mut lin = [0, 1, 2].map(|_| vec![0.0; ARTIFACT_LEN]);
    let mut ang = [0, 1, 2].map(|_| vec![0.0; ARTIFACT_LEN]);
    let hit = rng.random_range(80..150);
    let rebound = hit + rng.random_range(40..100);
    let rebound_amp = rng.random_range(0.2..0.5);
    let dir = random_unit(rng);
    let ring = if rng.random_bool(a.drop_soft_prob) { a.drop_soft_hz } else { a.drop_ring_hz };
    let freqs = [0, 1, 2].map(|_| ring.sample(rng));
    let decay = a.drop_decay_ms.sample(rng);
    for (start, amp) in [(hit, 1.0), (rebound, rebound_amp)] {
        for i in start..ARTIFACT_LEN {
            let t = (i - start) as f64;
            let env = amp * (-t / decay).exp();
            for k in 0..3 {
                // Contact onset jolts along the impact direction, then rings.
                lin[k][i] += env * dir[k] * ((2.0 * PI * freqs[k] * t / 1000.0).cos());
            }
        }
    }
    let spin = a.drop_spin_rps.sample(rng);
    let before = random_unit(rng).map(|c| c * spin * rng.random_range(0.2..0.6));
    let after = random_unit(rng).map(|c| c * spin);
    let settle = rng.random_range(20.0..80.0);
    for i in 0..ARTIFACT_LEN {
        for k in 0..3 {
            ang[k][i] = if i < hit {
                before[k]
            } else {
                after[k] * (-((i - hit) as f64) / settle).exp()
            };
        }
    }
    scale_to_peak(&mut lin, a.drop_peak_g.sample(rng));
    finish(spec, lin, ang, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{TRIGGER_INDEX, TRIGGER_THRESHOLD_G};

    fn small(seed: u64) -> BenchmarkSpec {
        BenchmarkSpec {
            n_true: 6,
            imbalance: 4,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn counts_and_labels() {
        let b = build_benchmark(&small(1)).unwrap();
        assert_eq!(b.events.len(), 30);
        let n_true = b.events.iter().filter(|(_, f, _)| f.label() == Label::TrueImpact).count();
        assert_eq!(n_true, 6);
        let names: std::collections::HashSet<_> = b.events.iter().map(|e| e.0.clone()).collect();
        assert_eq!(names.len(), 30);
    }

    #[test]
    fn every_event_triggers_at_the_window_index() {
        let b = build_benchmark(&small(2)).unwrap();
        for (name, family, s) in &b.events {
            let first = (0..crate::signals::WINDOW_LEN).find(|&i| s.lin_magnitude_g(i) >= TRIGGER_THRESHOLD_G);
            assert_eq!(first, Some(TRIGGER_INDEX), "{name} ({family:?})");
        }
    }

    #[test]
    fn artifact_mix_counts_are_exact() {
        let spec = BenchmarkSpec {
            n_true: 7,
            imbalance: 3,
            ..Default::default()
        };
        let fams = artifact_families(&spec);
        assert_eq!(fams.len(), 21);
        let count = |f| fams.iter().filter(|&&x| x == f).count();
        // 10.5 / 5.25 / 5.25 rounded by largest remainder.
        assert_eq!(count(Family::Chew) + count(Family::Spike) + count(Family::Drop), 21);
        assert!((10..=11).contains(&count(Family::Chew)));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(BenchmarkSpec { n_true: 0, ..Default::default() }.validate().is_err());
        assert!(BenchmarkSpec { imbalance: 0, ..Default::default() }.validate().is_err());
        let mut s = BenchmarkSpec::default();
        s.artifacts.chew_peak_g = Range::new(5.0, 20.0);
        assert!(s.validate().is_err());
    }
}
