use serde::{Deserialize, Serialize};

use super::{ImpactConfig, SurrogateParams};
use crate::error::{Error, Result};

/// Generalized coordinates: `[x_i, x_c, θx, θy, θz]`.
pub const NDOF: usize = 5;

type Vec3 = [f64; 3];
type Mat3 = [[f64; 3]; 3];
type Vec5 = [f64; NDOF];
type Mat5 = [[f64; NDOF]; NDOF];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub q: Vec5,
    pub qd: Vec5,
}

impl SimState {
    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qd).all(|v| v.is_finite())
    }
}

/// Hunt-Crossley contact force `k δ^n (1 + c δ̇)`, zero without penetration
/// and clamped at zero (no adhesion).
pub fn contact_force(penetration: f64, penetration_rate: f64, params: &SurrogateParams) -> f64 {
    if penetration <= 0.0 {
        return 0.0;
    }
    let f = params.k_foam * penetration.powf(params.n_foam) * (1.0 + params.c_foam * penetration_rate);
    f.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactState {
    pub penetration: f64,
    pub penetration_rate: f64,
    /// Unit normal from the impactor centre towards the head centre.
    pub normal: Vec3,
    pub force: f64,
}

fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat3_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

fn mat3_t_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [0, 1, 2].map(|i| a[0][i] * v[0] + a[1][i] * v[1] + a[2][i] * v[2])
}

fn skew(v: &Vec3) -> Mat3 {
    [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
}

fn rot_z(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn rot_y(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

/// Rotation matrix of the rotation vector `theta` (Rodrigues).
fn rotation(theta: &Vec3) -> Mat3 {
    let angle = (theta[0] * theta[0] + theta[1] * theta[1] + theta[2] * theta[2]).sqrt();
    let k = skew(theta);
    let k2 = mat3_mul(&k, &k);
    let (a, b) = if angle < 1e-8 {
        (1.0 - angle * angle / 6.0, 0.5 - angle * angle / 24.0)
    } else {
        (angle.sin() / angle, (1.0 - angle.cos()) / (angle * angle))
    };
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = if i == j { 1.0 } else { 0.0 } + a * k[i][j] + b * k2[i][j];
        }
    }
    r
}

fn invert5(m: &Mat5) -> Result<Mat5> {
    let mut a = *m;
    let mut inv = [[0.0; NDOF]; NDOF];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..NDOF {
        let pivot = (col..NDOF)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-14 {
            return Err(Error::invalid("singular mass matrix"));
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..NDOF {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..NDOF {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for j in 0..NDOF {
                        a[r][j] -= f * a[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Ok(inv)
}

/// The surrogate prepared for one configuration.
#[derive(Debug, Clone)]
pub struct ImpactModel {
    config: ImpactConfig,
    params: SurrogateParams,
    /// Initial head orientation, head frame to global.
    q0: Mat3,
    /// Global CG displacement per unit head rotation.
    b: Mat3,
    mass: Mat5,
    mass_inv: Mat5,
}

impl ImpactModel {
    pub fn new(config: ImpactConfig, params: &SurrogateParams) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        let reach = params.head_radius + params.impactor_radius + config.offset;
        if config.z.abs() >= reach {
            return Err(Error::invalid(format!(
                "vertical offset {} m misses the impactor entirely",
                config.z
            )));
        }
        let q0 = mat3_mul(&rot_z(config.alpha_deg), &rot_y(config.beta_deg));
        // CG relative to the pivot, head frame (z down).
        let r0 = [0.0, 0.0, -params.pivot_offset];
        let s = skew(&r0);
        let qs = mat3_mul(&q0, &s);
        let b = qs.map(|row| row.map(|v| -v));

        let mh = params.m_head;
        let r0sq = r0.iter().map(|v| v * v).sum::<f64>();
        let mut mass = [[0.0; NDOF]; NDOF];
        mass[0][0] = params.m_impactor;
        mass[1][1] = params.m_carriage + mh;
        for j in 0..3 {
            mass[1][2 + j] = mh * b[0][j];
            mass[2 + j][1] = mh * b[0][j];
            for k in 0..3 {
                let parallel_axis = mh * (if j == k { r0sq } else { 0.0 } - r0[j] * r0[k]);
                mass[2 + j][2 + k] = if j == k { params.i_head[j] } else { 0.0 } + parallel_axis;
            }
        }
        let mass_inv = invert5(&mass)?;
        Ok(Self {
            config,
            params: params.clone(),
            q0,
            b,
            mass,
            mass_inv,
        })
    }

    pub fn config(&self) -> &ImpactConfig {
        &self.config
    }

    pub fn params(&self) -> &SurrogateParams {
        &self.params
    }

    pub fn mass_matrix(&self) -> &Mat5 {
        &self.mass
    }

    /// Impactor `offset` away from the head, moving at `v0`; everything else
    /// at rest.
    pub fn initial_state(&self) -> SimState {
        let reach = self.params.head_radius + self.params.impactor_radius + self.config.offset;
        let mut q = [0.0; NDOF];
        q[0] = -(reach * reach - self.config.z * self.config.z).sqrt();
        let mut qd = [0.0; NDOF];
        qd[0] = self.config.v0;
        SimState { q, qd }
    }

    fn theta(v: &Vec5) -> Vec3 {
        [v[2], v[3], v[4]]
    }

    /// Global head centre position and velocity.
    fn head_centre(&self, s: &SimState) -> (Vec3, Vec3) {
        let dp = mat3_vec(&self.b, &Self::theta(&s.q));
        let dv = mat3_vec(&self.b, &Self::theta(&s.qd));
        (
            [s.q[1] + dp[0], dp[1], self.config.z + dp[2]],
            [s.qd[1] + dv[0], dv[1], dv[2]],
        )
    }

    pub fn contact(&self, s: &SimState) -> ContactState {
        let (ch, vh) = self.head_centre(s);
        let d = [ch[0] - s.q[0], ch[1], ch[2]];
        let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let normal = d.map(|v| v / dist);
        let rel_v = [vh[0] - s.qd[0], vh[1], vh[2]];
        let penetration = self.params.head_radius + self.params.impactor_radius - dist;
        let penetration_rate = -(rel_v[0] * normal[0] + rel_v[1] * normal[1] + rel_v[2] * normal[2]);
        ContactState {
            penetration,
            penetration_rate,
            normal,
            force: contact_force(penetration, penetration_rate, &self.params),
        }
    }

    pub fn generalized_forces(&self, s: &SimState) -> Vec5 {
        let c = self.contact(s);
        let f_head = c.normal.map(|n| c.force * n);
        let torque = mat3_t_vec(&self.b, &f_head);
        let mut out = [0.0; NDOF];
        out[0] = -f_head[0];
        out[1] = f_head[0];
        for j in 0..3 {
            out[2 + j] = torque[j] - self.params.k_neck * s.q[2 + j] - self.params.c_neck * s.qd[2 + j];
        }
        out
    }

    pub fn acceleration(&self, s: &SimState) -> Vec5 {
        let f = self.generalized_forces(s);
        self.mass_inv.map(|row| row.iter().zip(&f).map(|(m, f)| m * f).sum())
    }

    /// Kinetic plus contact and neck elastic energy.
    pub fn energy(&self, s: &SimState) -> f64 {
        let kinetic: f64 = (0..NDOF)
            .map(|i| (0..NDOF).map(|j| s.qd[i] * self.mass[i][j] * s.qd[j]).sum::<f64>())
            .sum::<f64>()
            * 0.5;
        let c = self.contact(s);
        let n = self.params.n_foam;
        let contact = if c.penetration > 0.0 {
            self.params.k_foam * c.penetration.powf(n + 1.0) / (n + 1.0)
        } else {
            0.0
        };
        let theta = Self::theta(&s.q);
        let neck = 0.5 * self.params.k_neck * theta.iter().map(|t| t * t).sum::<f64>();
        kinetic + contact + neck
    }

    /// Total x momentum of the impactor and carriage/head system.
    pub fn momentum_x(&self, s: &SimState) -> f64 {
        (0..NDOF).map(|j| (self.mass[0][j] + self.mass[1][j]) * s.qd[j]).sum()
    }

    /// Head-frame CG linear acceleration, angular velocity and angular
    /// acceleration for state `s` with generalized acceleration `qdd`.
    pub fn head_kinematics(&self, s: &SimState, qdd: &Vec5) -> (Vec3, Vec3, Vec3) {
        let rot_acc = mat3_vec(&self.b, &Self::theta(qdd));
        let a_global = [qdd[1] + rot_acc[0], rot_acc[1], rot_acc[2]];
        let a_initial_frame = mat3_t_vec(&self.q0, &a_global);
        let a_head = mat3_t_vec(&rotation(&Self::theta(&s.q)), &a_initial_frame);
        (a_head, Self::theta(&s.qd), Self::theta(qdd))
    }

    fn derivative(&self, s: &SimState) -> SimState {
        SimState {
            q: s.qd,
            qd: self.acceleration(s),
        }
    }
}

fn axpy(s: &SimState, k: &SimState, h: f64) -> SimState {
    let mut out = *s;
    for i in 0..NDOF {
        out.q[i] += h * k.q[i];
        out.qd[i] += h * k.qd[i];
    }
    out
}

fn rk4(model: &ImpactModel, s: &SimState, dt: f64) -> SimState {
    let k1 = model.derivative(s);
    let k2 = model.derivative(&axpy(s, &k1, 0.5 * dt));
    let k3 = model.derivative(&axpy(s, &k2, 0.5 * dt));
    let k4 = model.derivative(&axpy(s, &k3, dt));
    let mut out = *s;
    for i in 0..NDOF {
        out.q[i] += dt / 6.0 * (k1.q[i] + 2.0 * k2.q[i] + 2.0 * k3.q[i] + k4.q[i]);
        out.qd[i] += dt / 6.0 * (k1.qd[i] + 2.0 * k2.qd[i] + 2.0 * k3.qd[i] + k4.qd[i]);
    }
    out
}

/// One classical fourth-order Runge-Kutta step.
pub fn step_dynamics(state: &SimState, model: &ImpactModel, dt: f64) -> Result<SimState> {
    if !(dt > 0.0) || dt > model.params.dt * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "step {dt} s outside (0, {}] s",
            model.params.dt
        )));
    }
    let next = rk4(model, state, dt);
    if !next.is_finite() {
        return Err(Error::NonFinite("integrator state".into()));
    }
    Ok(next)
}

/// Head CG kinematics recorded at every integration step, head frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub dt: f64,
    pub t: Vec<f64>,
    /// m/s^2.
    pub lin_acc_cg: [Vec<f64>; 3],
    /// rad/s.
    pub ang_vel: [Vec<f64>; 3],
    /// rad/s^2.
    pub ang_acc: [Vec<f64>; 3],
}

impl SimOutput {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Largest linear acceleration magnitude in m/s^2.
    pub fn peak_lin_acc(&self) -> f64 {
        let a = &self.lin_acc_cg;
        (0..self.len())
            .map(|i| (a[0][i] * a[0][i] + a[1][i] * a[1][i] + a[2][i] * a[2][i]).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Integrates one impact for `params.duration` seconds at `params.dt`.
pub fn simulate_impact(config: &ImpactConfig, params: &SurrogateParams) -> Result<SimOutput> {
    let model = ImpactModel::new(*config, params)?;
    let n = params.n_samples();
    let mut out = SimOutput {
        dt: params.dt,
        t: Vec::with_capacity(n),
        lin_acc_cg: Default::default(),
        ang_vel: Default::default(),
        ang_acc: Default::default(),
    };
    for axis in 0..3 {
        out.lin_acc_cg[axis].reserve(n);
        out.ang_vel[axis].reserve(n);
        out.ang_acc[axis].reserve(n);
    }
    let mut state = model.initial_state();
    for step in 0..n {
        let qdd = model.acceleration(&state);
        let (lin, w, wd) = model.head_kinematics(&state, &qdd);
        out.t.push(step as f64 * params.dt);
        for axis in 0..3 {
            out.lin_acc_cg[axis].push(lin[axis]);
            out.ang_vel[axis].push(w[axis]);
            out.ang_acc[axis].push(wd[axis]);
        }
        if step + 1 < n {
            state = rk4(&model, &state, params.dt);
            if !state.is_finite() {
                return Err(Error::NumericalBlowup {
                    step: step + 1,
                    time: (step + 1) as f64 * params.dt,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_sweep, SweepSpec};

    fn config(alpha_deg: f64, beta_deg: f64, z: f64, v0: f64) -> ImpactConfig {
        ImpactConfig {
            alpha_deg,
            beta_deg,
            z,
            v0,
            offset: 0.01,
        }
    }

    #[test]
    fn contact_force_examples() {
        let p = SurrogateParams {
            k_foam: 1e6,
            n_foam: 1.5,
            ..Default::default()
        };
        assert_eq!(contact_force(-0.001, 3.0, &p), 0.0);
        assert!((contact_force(0.01, 0.0, &p) - 1000.0).abs() < 1e-9);
        assert!(contact_force(0.01, 2.0, &p) > contact_force(0.01, -1.0, &p));
        // Fast separation would pull; the clamp forbids adhesion.
        assert_eq!(contact_force(0.01, -10.0, &p), 0.0);
    }

    #[test]
    fn mass_matrix_is_symmetric_and_inverse_is_exact() {
        let m = ImpactModel::new(config(-60.0, 20.0, 0.03, 5.0), &SurrogateParams::default()).unwrap();
        for i in 0..NDOF {
            for j in 0..NDOF {
                assert_eq!(m.mass[i][j], m.mass[j][i]);
                let prod: f64 = (0..NDOF).map(|k| m.mass[i][k] * m.mass_inv[k][j]).sum();
                assert!((prod - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rest_state_is_a_fixed_point() {
        let model = ImpactModel::new(config(-90.0, 0.0, 0.0, 0.0), &SurrogateParams::default()).unwrap();
        let s = model.initial_state();
        assert_eq!(step_dynamics(&s, &model, 1e-5).unwrap(), s);
    }

    #[test]
    fn free_flight_advances_by_v0_dt() {
        let model = ImpactModel::new(config(-90.0, 0.0, 0.0, 5.0), &SurrogateParams::default()).unwrap();
        let s = model.initial_state();
        let next = step_dynamics(&s, &model, 1e-5).unwrap();
        assert!((next.q[0] - (s.q[0] + 5.0 * 1e-5)).abs() <= 1e-15);
        assert_eq!(next.qd, s.qd);
    }

    #[test]
    fn oversized_step_rejected() {
        let model = ImpactModel::new(config(-90.0, 0.0, 0.0, 5.0), &SurrogateParams::default()).unwrap();
        assert!(step_dynamics(&model.initial_state(), &model, 2e-5).is_err());
    }

    #[test]
    fn zero_velocity_never_reaches_the_head() {
        let out = simulate_impact(&config(-90.0, 0.0, 0.0, 0.0), &SurrogateParams::default()).unwrap();
        assert_eq!(out.len(), 15001);
        assert_eq!(out.peak_lin_acc(), 0.0);
    }

    #[test]
    fn deterministic() {
        let c = config(-120.0, 10.0, 0.02, 5.0);
        let p = SurrogateParams::default();
        assert_eq!(simulate_impact(&c, &p).unwrap(), simulate_impact(&c, &p).unwrap());
    }

    #[test]
    fn energy_never_increases() {
        let p = SurrogateParams::default();
        for c in [config(-90.0, 0.0, 0.0, 8.0), config(-150.0, -30.0, 0.06, 5.0), config(-30.0, 20.0, -0.04, 2.0)] {
            let model = ImpactModel::new(c, &p).unwrap();
            let mut s = model.initial_state();
            let mut e = model.energy(&s);
            let e0 = e;
            for _ in 0..6000 {
                s = step_dynamics(&s, &model, p.dt).unwrap();
                let e_next = model.energy(&s);
                assert!(e_next <= e * (1.0 + 1e-6), "{e_next} > {e}");
                e = e_next;
            }
            assert!(e < e0, "impact should dissipate energy");
        }
    }

    #[test]
    fn x_momentum_conserved_with_neck_decoupled() {
        let p = SurrogateParams {
            k_neck: 0.0,
            c_neck: 0.0,
            ..Default::default()
        };
        let model = ImpactModel::new(config(-60.0, 10.0, 0.03, 8.0), &p).unwrap();
        let mut s = model.initial_state();
        let p0 = model.momentum_x(&s);
        let mut touched = false;
        for _ in 0..5000 {
            s = step_dynamics(&s, &model, p.dt).unwrap();
            touched |= model.contact(&s).force > 0.0;
            assert!((model.momentum_x(&s) - p0).abs() <= 1e-6 * p0.abs());
        }
        assert!(touched);
    }

    #[test]
    fn peak_acceleration_increases_with_speed() {
        let p = SurrogateParams::default();
        let spec = SweepSpec {
            v0: vec![2.0, 5.0, 8.0],
            ..Default::default()
        };
        let sweep = build_sweep(&spec, &p).unwrap();
        for chunk in sweep.chunks(3).step_by(37).take(8) {
            let peaks: Vec<f64> = chunk.iter().map(|c| simulate_impact(c, &p).unwrap().peak_lin_acc()).collect();
            assert!(peaks[0] < peaks[1] && peaks[1] < peaks[2], "{chunk:?}: {peaks:?}");
        }
    }

    fn assert_mirrored(a: &SimOutput, b: &SimOutput, lin_sign: [f64; 3], ang_sign: [f64; 3]) {
        for axis in 0..3 {
            let pairs = [
                (&a.lin_acc_cg[axis], &b.lin_acc_cg[axis], lin_sign[axis]),
                (&a.ang_vel[axis], &b.ang_vel[axis], ang_sign[axis]),
                (&a.ang_acc[axis], &b.ang_acc[axis], ang_sign[axis]),
            ];
            for (x, y, sign) in pairs {
                let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                for (u, v) in x.iter().zip(y.iter()) {
                    assert!((u - sign * v).abs() <= 1e-9 * scale, "axis {axis}: {u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn tilt_mirror_at_side_impact() {
        // At alpha = -90 flipping beta reflects the global y axis, which maps
        // to a front-back reflection of the head frame.
        let p = SurrogateParams::default();
        let a = simulate_impact(&config(-90.0, 20.0, 0.02, 5.0), &p).unwrap();
        let b = simulate_impact(&config(-90.0, -20.0, 0.02, 5.0), &p).unwrap();
        assert!(a.peak_lin_acc() > 50.0);
        assert_mirrored(&a, &b, [-1.0, 1.0, 1.0], [1.0, -1.0, -1.0]);
    }

    #[test]
    fn front_back_mirror_pairs() {
        // (alpha, beta) and (-180 - alpha, -beta) are front-back reflections
        // of the same impact.
        let p = SurrogateParams {
            duration: 0.05,
            ..Default::default()
        };
        let a = simulate_impact(&config(-60.0, 10.0, 0.03, 5.0), &p).unwrap();
        let b = simulate_impact(&config(-120.0, -10.0, 0.03, 5.0), &p).unwrap();
        assert!(a.peak_lin_acc() > 50.0);
        assert_mirrored(&a, &b, [-1.0, 1.0, 1.0], [1.0, -1.0, -1.0]);
    }

    fn run(model: &ImpactModel, s: SimState, dt: f64, t_end: f64) -> SimState {
        let steps = (t_end / dt).round() as usize;
        (0..steps).fold(s, |s, _| step_dynamics(&s, model, dt).unwrap())
    }

    fn dist(a: &SimState, b: &SimState) -> f64 {
        a.q.iter()
            .chain(&a.qd)
            .zip(b.q.iter().chain(&b.qd))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn rk4_convergence_order() {
        let p = SurrogateParams::default();
        let model = ImpactModel::new(config(-90.0, 0.0, 0.0, 5.0), &p).unwrap();
        let mut s = model.initial_state();
        // Start inside the contact so the onset kink is not integrated over.
        s.q[0] += 0.01 + 0.003;
        let t_end = 2e-3;
        let reference = run(&model, s, 2.5e-6, t_end);
        let e1 = dist(&run(&model, s, 1e-5, t_end), &reference);
        let e2 = dist(&run(&model, s, 5e-6, t_end), &reference);
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio} ({e1:e} / {e2:e})");
    }
}
