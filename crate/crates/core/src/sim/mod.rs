//! Lumped head-neck-impactor surrogate for generating synthetic impacts.
//!
//! The model has five degrees of freedom: impactor translation `x_i`,
//! carriage-plus-head translation `x_c`, and a small head rotation `θ`
//! (head-frame rotation vector) about a neck pivot below the head centre of
//! gravity. The head is a sphere centred on the CG and the impactor face is a
//! sphere travelling along the global x axis; contact follows a Hunt-Crossley
//! law. Global axes follow the SAE convention with x along the impactor
//! travel and z pointing down.

mod dynamics;
mod export;

pub use dynamics::{
    contact_force, simulate_impact, step_dynamics, ContactState, ImpactModel, SimOutput, SimState, NDOF,
};
pub use export::{boxcar_decimate, simulate_event, simulate_sweep, to_mouthguard_event, SimulatedEvent};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One point of the impact configuration space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactConfig {
    /// Head azimuth in degrees, in (-180, 0).
    pub alpha_deg: f64,
    /// Head tilt in degrees, in [-30, 30].
    pub beta_deg: f64,
    /// Vertical head offset from the impactor axis in metres (z down).
    pub z: f64,
    /// Initial impactor speed in m/s.
    pub v0: f64,
    /// Initial impactor-head gap in metres, in [0.005, 0.020].
    pub offset: f64,
}

impl ImpactConfig {
    pub fn validate(&self) -> Result<()> {
        let ImpactConfig {
            alpha_deg,
            beta_deg,
            z,
            v0,
            offset,
        } = *self;
        if !(alpha_deg > -180.0 && alpha_deg < 0.0) {
            return Err(Error::invalid(format!("alpha {alpha_deg} deg outside (-180, 0)")));
        }
        if !(-30.0..=30.0).contains(&beta_deg) {
            return Err(Error::invalid(format!("beta {beta_deg} deg outside [-30, 30]")));
        }
        if !(0.005..=0.020).contains(&offset) {
            return Err(Error::invalid(format!("offset {offset} m outside [0.005, 0.020]")));
        }
        if !(v0 >= 0.0) || !v0.is_finite() {
            return Err(Error::invalid(format!("impact velocity {v0} m/s must be finite and non-negative")));
        }
        if !z.is_finite() || z.abs() >= 0.2 {
            return Err(Error::invalid(format!("vertical offset {z} m out of range")));
        }
        Ok(())
    }
}

/// Physical constants of the surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateParams {
    pub m_impactor: f64,
    pub m_carriage: f64,
    pub m_head: f64,
    pub head_radius: f64,
    pub impactor_radius: f64,
    /// Distance from the neck pivot up to the head CG.
    pub pivot_offset: f64,
    /// Principal moments of inertia about the CG (head frame), kg m^2.
    pub i_head: [f64; 3],
    pub k_foam: f64,
    pub n_foam: f64,
    pub c_foam: f64,
    pub k_neck: f64,
    pub c_neck: f64,
    pub dt: f64,
    pub duration: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            m_impactor: 15.6,
            m_carriage: 17.7,
            m_head: 4.54,
            head_radius: 0.09,
            impactor_radius: 0.15,
            pivot_offset: 0.05,
            i_head: [0.020, 0.022, 0.015],
            k_foam: 8e5,
            n_foam: 1.5,
            c_foam: 0.5,
            k_neck: 100.0,
            c_neck: 2.0,
            dt: 1e-5,
            duration: 0.150,
        }
    }
}

impl SurrogateParams {
    pub const MAX_DT: f64 = 1e-5;

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m_impactor", self.m_impactor),
            ("m_carriage", self.m_carriage),
            ("m_head", self.m_head),
            ("head_radius", self.head_radius),
            ("impactor_radius", self.impactor_radius),
            ("i_head[0]", self.i_head[0]),
            ("i_head[1]", self.i_head[1]),
            ("i_head[2]", self.i_head[2]),
            ("k_foam", self.k_foam),
            ("n_foam", self.n_foam),
            ("dt", self.dt),
            ("duration", self.duration),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("pivot_offset", self.pivot_offset),
            ("c_foam", self.c_foam),
            ("k_neck", self.k_neck),
            ("c_neck", self.c_neck),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.dt > Self::MAX_DT * (1.0 + 1e-12) {
            return Err(Error::invalid(format!("dt {} s exceeds {} s", self.dt, Self::MAX_DT)));
        }
        Ok(())
    }

    /// Number of recorded samples, including t = 0.
    pub fn n_samples(&self) -> usize {
        (self.duration / self.dt + 1e-6).floor() as usize + 1
    }
}

/// Grid of configurations swept to build the synthetic pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub alpha_deg: Vec<f64>,
    pub beta_deg: Vec<f64>,
    pub z_count: usize,
    pub v0: Vec<f64>,
    pub offset: f64,
    /// Per-azimuth vertical range `(alpha_deg, z_min, z_max)`; azimuths not
    /// listed use `default_z_range`.
    pub z_ranges: Vec<(f64, f64, f64)>,
    pub default_z_range: (f64, f64),
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            alpha_deg: vec![-150.0, -120.0, -90.0, -60.0, -30.0],
            beta_deg: vec![-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0],
            z_count: 10,
            v0: vec![2.0, 5.0, 8.0],
            offset: 0.010,
            z_ranges: Vec::new(),
            default_z_range: (-0.06, 0.06),
        }
    }
}

impl SweepSpec {
    pub fn z_range(&self, alpha_deg: f64) -> (f64, f64) {
        self.z_ranges
            .iter()
            .find(|(a, _, _)| (a - alpha_deg).abs() < 1e-9)
            .map(|&(_, lo, hi)| (lo, hi))
            .unwrap_or(self.default_z_range)
    }

    /// Admissible z levels for one azimuth: evenly spaced over the stored
    /// range, keeping only levels whose nominal contact point lies above the
    /// neck pivot plane.
    pub fn z_levels(&self, alpha_deg: f64, params: &SurrogateParams) -> Vec<f64> {
        let (lo, hi) = self.z_range(alpha_deg);
        let levels: Vec<f64> = match self.z_count {
            0 => Vec::new(),
            1 => vec![0.5 * (lo + hi)],
            n => (0..n)
                .map(|k| {
                    let s = k as f64 / (n - 1) as f64;
                    lo * (1.0 - s) + hi * s
                })
                .collect(),
        };
        levels
            .into_iter()
            .filter(|&z| contact_depth_below_cg(z, self.offset, params) < params.pivot_offset)
            .collect()
    }
}

/// Head-frame depth (z down) of the first contact point below the CG for an
/// untilted head at vertical offset `z`.
fn contact_depth_below_cg(z: f64, offset: f64, params: &SurrogateParams) -> f64 {
    let reach = params.head_radius + params.impactor_radius + offset;
    // The contact normal points from the impactor centre to the head centre.
    -params.head_radius * z / reach
}

/// Cartesian product of the sweep axes, alpha-major then beta, z and v0.
pub fn build_sweep(spec: &SweepSpec, params: &SurrogateParams) -> Result<Vec<ImpactConfig>> {
    for (name, list) in [("alpha", &spec.alpha_deg), ("beta", &spec.beta_deg), ("v0", &spec.v0)] {
        if list.is_empty() {
            return Err(Error::invalid(format!("{name} list is empty")));
        }
        for (i, a) in list.iter().enumerate() {
            if list[..i].iter().any(|b| (a - b).abs() < 1e-12) {
                return Err(Error::invalid(format!("duplicate {name} value {a}")));
            }
        }
    }
    if spec.z_count == 0 {
        return Err(Error::invalid("z_count must be at least 1"));
    }
    let mut out = Vec::with_capacity(spec.alpha_deg.len() * spec.beta_deg.len() * spec.z_count * spec.v0.len());
    for &alpha_deg in &spec.alpha_deg {
        let zs = spec.z_levels(alpha_deg, params);
        for &beta_deg in &spec.beta_deg {
            for &z in &zs {
                for &v0 in &spec.v0 {
                    let c = ImpactConfig {
                        alpha_deg,
                        beta_deg,
                        z,
                        v0,
                        offset: spec.offset,
                    };
                    c.validate()?;
                    out.push(c);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sweep_has_1050_configs() {
        let sweep = build_sweep(&SweepSpec::default(), &SurrogateParams::default()).unwrap();
        assert_eq!(sweep.len(), 5 * 7 * 10 * 3);
        assert_eq!(sweep[0].alpha_deg, -150.0);
        assert_eq!(sweep[0].beta_deg, -30.0);
        assert_eq!((sweep[0].v0, sweep[1].v0, sweep[2].v0), (2.0, 5.0, 8.0));
        assert!((sweep[3].z - sweep[0].z - 0.12 / 9.0).abs() < 1e-15);
        assert_eq!(sweep[27].z, 0.06);
        assert_eq!(sweep.last().unwrap().alpha_deg, -30.0);
    }

    #[test]
    fn singleton_sweep() {
        let spec = SweepSpec {
            alpha_deg: vec![-90.0],
            beta_deg: vec![0.0],
            z_count: 1,
            v0: vec![5.0],
            ..Default::default()
        };
        let sweep = build_sweep(&spec, &SurrogateParams::default()).unwrap();
        assert_eq!(sweep.len(), 1);
        assert_eq!(sweep[0].z, 0.0);
    }

    #[test]
    fn out_of_range_values_rejected() {
        let p = SurrogateParams::default();
        for spec in [
            SweepSpec { alpha_deg: vec![0.0], ..Default::default() },
            SweepSpec { beta_deg: vec![40.0], ..Default::default() },
            SweepSpec { offset: 0.03, ..Default::default() },
            SweepSpec { v0: vec![], ..Default::default() },
            SweepSpec { v0: vec![2.0, 2.0], ..Default::default() },
        ] {
            assert!(matches!(build_sweep(&spec, &p), Err(Error::InvalidArgument(_))), "{spec:?}");
        }
    }

    #[test]
    fn neck_plane_filter_drops_low_contacts() {
        let spec = SweepSpec {
            default_z_range: (-0.18, 0.06),
            z_count: 9,
            ..Default::default()
        };
        let p = SurrogateParams::default();
        let zs = spec.z_levels(-90.0, &p);
        assert!(zs.len() < 9);
        assert!(zs.iter().all(|&z| contact_depth_below_cg(z, spec.offset, &p) < p.pivot_offset));
        let per_alpha = SweepSpec {
            z_ranges: vec![(-90.0, 0.0, 0.01)],
            ..Default::default()
        };
        assert_eq!(per_alpha.z_levels(-90.0, &p)[9], 0.01);
        assert_eq!(per_alpha.z_levels(-60.0, &p)[9], 0.06);
    }

    #[test]
    fn params_validation() {
        assert!(SurrogateParams::default().validate().is_ok());
        assert!(SurrogateParams { dt: 2e-5, ..Default::default() }.validate().is_err());
        assert!(SurrogateParams { m_head: 0.0, ..Default::default() }.validate().is_err());
        assert!(SurrogateParams { c_neck: -1.0, ..Default::default() }.validate().is_err());
        assert_eq!(SurrogateParams::default().n_samples(), 15001);
    }
}
