//! Classical free rigid body: Euler equations in the body frame, attitude
//! kinematics, the energy-momentum diagram and tennis-racket flips.
//!
//! Attitude is carried internally as a unit quaternion `q` (body to space)
//! with `q̇ = ½ q ⊗ (0, Ω)`, which has no coordinate singularity. Euler
//! angles are extracted for reporting in the `zyz` convention whose third
//! column is `(sinθ cosφ, sinθ sinφ, cosθ)`, the direction cosines of the
//! body `z` axis.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RotorError};

/// Principal moments with `I_x >= I_y >= I_z > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertiaSpec {
    pub ix: f64,
    pub iy: f64,
    pub iz: f64,
}

impl InertiaSpec {
    pub fn new(ix: f64, iy: f64, iz: f64) -> Result<Self> {
        let s = Self { ix, iy, iz };
        s.validate()?;
        Ok(s)
    }

    /// Moments from rotational constants `A <= B <= C`, `I = 1/(2X)`.
    pub fn from_constants(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::new(0.5 / a, 0.5 / b, 0.5 / c)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.ix, self.iy, self.iz];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(RotorError::InvalidInput("moments of inertia must be finite and > 0".into()));
        }
        if !(self.ix >= self.iy && self.iy >= self.iz) {
            return Err(RotorError::InvalidInput("moments must satisfy I_x >= I_y >= I_z".into()));
        }
        Ok(())
    }

    pub fn angular_velocity(&self, j: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(j.x / self.ix, j.y / self.iy, j.z / self.iz)
    }

    /// `H₀ = Σ J_k² / (2 I_k)`.
    pub fn energy(&self, j: &Vector3<f64>) -> f64 {
        0.5 * (j.x * j.x / self.ix + j.y * j.y / self.iy + j.z * j.z / self.iz)
    }

    /// `2π I_y / |J|`, the rotation period about the intermediate axis.
    pub fn characteristic_period(&self, j_norm: f64) -> f64 {
        2.0 * std::f64::consts::PI * self.iy / j_norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalState {
    pub j_body: [f64; 3],
    /// `(θ, φ, χ)`, radians.
    pub euler: [f64; 3],
}

/// Body-to-space rotation `R = R_z(φ) R_y(θ) R_z(χ)`.
pub fn rotation_from_euler(theta: f64, phi: f64, chi: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), phi)
        * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), theta)
        * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), chi)
}

/// Inverse of [`rotation_from_euler`]; at `θ ∈ {0, π}` the split between
/// `φ` and `χ` is arbitrary and `χ = 0` is returned.
pub fn euler_from_rotation(r: &Matrix3<f64>) -> [f64; 3] {
    let theta = r[(2, 2)].clamp(-1.0, 1.0).acos();
    let s = (r[(0, 2)].powi(2) + r[(1, 2)].powi(2)).sqrt();
    if s < 1e-12 {
        let phi = r[(1, 0)].atan2(r[(0, 0)]);
        return [theta, if r[(2, 2)] > 0.0 { phi } else { -phi }, 0.0];
    }
    let phi = r[(1, 2)].atan2(r[(0, 2)]);
    let chi = r[(2, 1)].atan2(-r[(2, 0)]);
    [theta, phi, chi]
}

#[derive(Debug, Clone)]
pub struct ClassicalTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<ClassicalState>,
    pub attitudes: Vec<UnitQuaternion<f64>>,
    pub steps: usize,
}

impl ClassicalTrajectory {
    pub fn j_component(&self, k: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.j_body[k]).collect()
    }

    /// Largest `|ΔH₀|/H₀` and `|Δ|J|²|/|J|²` relative to the first sample.
    pub fn conservation_errors(&self, inertia: &InertiaSpec) -> (f64, f64) {
        let v = |s: &ClassicalState| Vector3::from(s.j_body);
        let e0 = inertia.energy(&v(&self.states[0]));
        let n0 = v(&self.states[0]).norm_squared();
        self.states.iter().fold((0.0, 0.0), |(de, dn), s| {
            let j = v(s);
            (
                de.max(((inertia.energy(&j) - e0) / e0).abs()),
                dn.max(((j.norm_squared() - n0) / n0).abs()),
            )
        })
    }

    /// Space-frame angular momentum `R J_body` at each sample (constant for
    /// exact free motion).
    pub fn space_momentum(&self) -> Vec<Vector3<f64>> {
        self.states
            .iter()
            .zip(&self.attitudes)
            .map(|(s, q)| q.transform_vector(&Vector3::from(s.j_body)))
            .collect()
    }
}

type Y = [f64; 7];

fn rhs(inertia: &InertiaSpec, y: &Y) -> Y {
    let j = Vector3::new(y[0], y[1], y[2]);
    let w = inertia.angular_velocity(&j);
    let dj = j.cross(&w);
    let q = Quaternion::new(y[3], y[4], y[5], y[6]);
    let dq = q * Quaternion::new(0.0, w.x, w.y, w.z) * 0.5;
    [dj.x, dj.y, dj.z, dq.w, dq.i, dq.j, dq.k]
}

fn add(y: &Y, terms: &[(f64, &Y)]) -> Y {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..7 {
            out[i] += c * k[i];
        }
    }
    out
}

/// One Dormand-Prince 5(4) step; returns the fifth-order solution and the
/// embedded error estimate.
fn dp45(inertia: &InertiaSpec, y: &Y, h: f64) -> (Y, f64) {
    let k1 = rhs(inertia, y);
    let k2 = rhs(inertia, &add(y, &[(h / 5.0, &k1)]));
    let k3 = rhs(inertia, &add(y, &[(h * 3.0 / 40.0, &k1), (h * 9.0 / 40.0, &k2)]));
    let k4 = rhs(
        inertia,
        &add(y, &[(h * 44.0 / 45.0, &k1), (-h * 56.0 / 15.0, &k2), (h * 32.0 / 9.0, &k3)]),
    );
    let k5 = rhs(
        inertia,
        &add(
            y,
            &[
                (h * 19372.0 / 6561.0, &k1),
                (-h * 25360.0 / 2187.0, &k2),
                (h * 64448.0 / 6561.0, &k3),
                (-h * 212.0 / 729.0, &k4),
            ],
        ),
    );
    let k6 = rhs(
        inertia,
        &add(
            y,
            &[
                (h * 9017.0 / 3168.0, &k1),
                (-h * 355.0 / 33.0, &k2),
                (h * 46732.0 / 5247.0, &k3),
                (h * 49.0 / 176.0, &k4),
                (-h * 5103.0 / 18656.0, &k5),
            ],
        ),
    );
    let y5 = add(
        y,
        &[
            (h * 35.0 / 384.0, &k1),
            (h * 500.0 / 1113.0, &k3),
            (h * 125.0 / 192.0, &k4),
            (-h * 2187.0 / 6784.0, &k5),
            (h * 11.0 / 84.0, &k6),
        ],
    );
    let k7 = rhs(inertia, &y5);
    let e = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let ks = [k1, k2, k3, k4, k5, k6, k7];
    let scale_j = y[..3].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut err: f64 = 0.0;
    for i in 0..7 {
        let d: f64 = h * (0..7).map(|s| e[s] * ks[s][i]).sum::<f64>();
        let sc = if i < 3 { scale_j } else { 1.0 };
        err = err.max(d.abs() / sc);
    }
    (y5, err)
}

fn state_of(y: &Y) -> (ClassicalState, UnitQuaternion<f64>) {
    let q = UnitQuaternion::from_quaternion(Quaternion::new(y[3], y[4], y[5], y[6]));
    let euler = euler_from_rotation(q.to_rotation_matrix().matrix());
    (
        ClassicalState {
            j_body: [y[0], y[1], y[2]],
            euler,
        },
        q,
    )
}

/// Integrate the Euler equations with attitude from `t = 0` to `t_end`,
/// sampling `samples + 1` equally spaced times. `tol` bounds the local
/// error per step relative to `|J|`.
pub fn integrate_euler(
    inertia: &InertiaSpec,
    initial: &ClassicalState,
    t_end: f64,
    tol: f64,
    samples: usize,
) -> Result<ClassicalTrajectory> {
    inertia.validate()?;
    if !(tol > 0.0) || !(t_end > 0.0) || samples == 0 {
        return Err(RotorError::InvalidInput("need tol > 0, t_end > 0 and samples >= 1".into()));
    }
    let j0 = Vector3::from(initial.j_body);
    if !(j0.norm() > 0.0) {
        return Err(RotorError::InvalidInput("angular momentum must be non-zero".into()));
    }
    let [th, ph, ch] = initial.euler;
    let q0 = rotation_from_euler(th, ph, ch);
    let mut y: Y = [j0.x, j0.y, j0.z, q0.w, q0.i, q0.j, q0.k];
    let omega = inertia.angular_velocity(&j0).norm();
    let mut h = 0.01 / omega;
    let mut t = 0.0;
    let mut steps = 0;
    let mut traj = ClassicalTrajectory {
        times: Vec::with_capacity(samples + 1),
        states: Vec::with_capacity(samples + 1),
        attitudes: Vec::with_capacity(samples + 1),
        steps: 0,
    };
    let (s, q) = state_of(&y);
    traj.times.push(0.0);
    traj.states.push(ClassicalState { euler: initial.euler, ..s });
    traj.attitudes.push(q);
    for i in 1..=samples {
        let target = if i == samples {
            t_end
        } else {
            t_end * i as f64 / samples as f64
        };
        while t < target {
            let last = h >= target - t;
            let step = if last { target - t } else { h };
            let (y5, err) = dp45(inertia, &y, step);
            if err <= tol {
                y = y5;
                t = if last { target } else { t + step };
                steps += 1;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0) };
            if err <= tol && last {
                h = h.max(step * factor);
            } else {
                h = step * factor;
            }
            if h < 1e-14 * target.abs().max(1.0) {
                return Err(RotorError::Numerical(format!("rigid-body step underflow at t = {t}")));
            }
        }
        let (s, q) = state_of(&y);
        traj.times.push(target);
        traj.states.push(s);
        traj.attitudes.push(q);
    }
    traj.steps = steps;
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmRow {
    pub j: f64,
    pub e_min: f64,
    pub e_sep: f64,
    pub e_max: f64,
}

/// Allowed band `[J²/2I_x, J²/2I_z]` and separatrix `J²/2I_y` for each `J`.
pub fn em_diagram(inertia: &InertiaSpec, j_values: &[f64]) -> Result<Vec<EmRow>> {
    inertia.validate()?;
    j_values
        .iter()
        .map(|&j| {
            if !(j >= 0.0 && j.is_finite()) {
                return Err(RotorError::InvalidInput(format!("J must be >= 0, got {j}")));
            }
            let j2 = j * j;
            Ok(EmRow {
                j,
                e_min: j2 / (2.0 * inertia.ix),
                e_sep: j2 / (2.0 * inertia.iy),
                e_max: j2 / (2.0 * inertia.iz),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Rotating,
    Oscillating,
    Separatrix,
    Forbidden,
}

/// Classify `(E, J)` against the separatrix with tolerance `1e-12 J²`.
pub fn classify(inertia: &InertiaSpec, e: f64, j: f64) -> Motion {
    let j2 = j * j;
    let tol = 1e-12 * j2;
    let (lo, sep, hi) = (j2 / (2.0 * inertia.ix), j2 / (2.0 * inertia.iy), j2 / (2.0 * inertia.iz));
    if e < lo - tol || e > hi + tol {
        Motion::Forbidden
    } else if (e - sep).abs() <= tol {
        Motion::Separatrix
    } else if e > sep {
        Motion::Rotating
    } else {
        Motion::Oscillating
    }
}

/// Times at which the intermediate-axis component `J_y` changes sign,
/// linearly interpolated between samples.
pub fn tennis_racket_flips(traj: &ClassicalTrajectory) -> Vec<f64> {
    let jy = traj.j_component(1);
    let mut out = Vec::new();
    for i in 1..jy.len() {
        let (a, b) = (jy[i - 1], jy[i]);
        if a == 0.0 && i > 1 {
            continue;
        }
        if (a < 0.0 && b >= 0.0) || (a > 0.0 && b <= 0.0) {
            let (t0, t1) = (traj.times[i - 1], traj.times[i]);
            out.push(t0 + (t1 - t0) * a / (a - b));
        }
    }
    out
}

/// Full period of the body-frame motion estimated from consecutive flips
/// (two sign changes per period).
pub fn flip_period(flips: &[f64]) -> Option<f64> {
    (flips.len() >= 3).then(|| 2.0 * (flips[flips.len() - 1] - flips[0]) / (flips.len() - 1) as f64)
}

/// Period of `J_body(t)` from the quadrature of `dt = dJ_y / J̇_y`.
///
/// With `J_y = a sin u` between its turning points the square-root endpoint
/// singularity cancels, leaving `T = 2/(|c|√κ) ∫ du / |J_⊥(a sin u)|` over
/// `[-π/2, π/2]`, where `J_⊥` is the component that does not vanish on the
/// orbit. Evaluated by adaptive Simpson to `1e-13` relative.
pub fn elliptic_period(inertia: &InertiaSpec, j_body: [f64; 3]) -> Result<f64> {
    inertia.validate()?;
    let j = Vector3::from(j_body);
    let j2 = j.norm_squared();
    let e2 = 2.0 * inertia.energy(&j);
    let (wx, wy, wz) = (1.0 / inertia.ix, 1.0 / inertia.iy, 1.0 / inertia.iz);
    let d = wz - wx;
    if d <= 0.0 {
        return Err(RotorError::InvalidInput("symmetric tops have no elliptic period".into()));
    }
    let c = (wx - wz).abs();
    let sep = j2 * wy;
    // amplitude of J_y, the vanishing component, and the other component squared as a function of J_y
    let (a2, kappa, other): (f64, f64, Box<dyn Fn(f64) -> f64>) = if e2 > sep {
        let a2 = (j2 * wz - e2) / (wz - wy);
        (a2, (wz - wy) / d, Box::new(move |jy: f64| (e2 - j2 * wx - jy * jy * (wy - wx)) / d))
    } else if e2 < sep {
        let a2 = (e2 - j2 * wx) / (wy - wx);
        (a2, (wy - wx) / d, Box::new(move |jy: f64| (j2 * wz - e2 - jy * jy * (wz - wy)) / d))
    } else {
        return Err(RotorError::InvalidInput("separatrix orbits have infinite period".into()));
    };
    let a = a2.max(0.0).sqrt();
    let f = |u: f64| 1.0 / other(a * u.sin()).max(0.0).sqrt();
    let half = std::f64::consts::FRAC_PI_2;
    let integral = adaptive_simpson(&f, -half, half, 1e-13, 60);
    Ok(2.0 / (c * kappa.sqrt()) * integral)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, rel_tol * whole.abs(), depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn racket() -> InertiaSpec {
        InertiaSpec::new(2.0, 1.5, 1.0).unwrap()
    }

    fn start(j: [f64; 3]) -> ClassicalState {
        ClassicalState {
            j_body: j,
            euler: [0.3, 0.2, 0.1],
        }
    }

    #[test]
    fn em_rows() {
        let rows = em_diagram(&racket(), &[1.0, 0.0]).unwrap();
        assert!((rows[0].e_min - 0.25).abs() < 1e-15);
        assert!((rows[0].e_sep - 1.0 / 3.0).abs() < 1e-15);
        assert!((rows[0].e_max - 0.5).abs() < 1e-15);
        assert_eq!((rows[1].e_min, rows[1].e_sep, rows[1].e_max), (0.0, 0.0, 0.0));
        assert!(em_diagram(&racket(), &[-1.0]).is_err());
    }

    #[test]
    fn classification_examples() {
        let i = racket();
        assert_eq!(classify(&i, 0.4, 1.0), Motion::Rotating);
        assert_eq!(classify(&i, 0.3, 1.0), Motion::Oscillating);
        assert_eq!(classify(&i, 0.6, 1.0), Motion::Forbidden);
        assert_eq!(classify(&i, 0.2, 1.0), Motion::Forbidden);
        assert_eq!(classify(&i, 1.0 / 3.0, 1.0), Motion::Separatrix);
    }

    #[test]
    fn principal_axis_is_fixed_point() {
        let traj = integrate_euler(&racket(), &start([0.0, 0.0, 2.0]), 20.0, 1e-12, 40).unwrap();
        for s in &traj.states {
            assert_eq!(s.j_body, [0.0, 0.0, 2.0]);
        }
        assert!(tennis_racket_flips(&traj).is_empty());
    }

    #[test]
    fn symmetric_top_precesses_circularly() {
        let i = InertiaSpec::new(2.0, 2.0, 1.0).unwrap();
        let traj = integrate_euler(&i, &start([0.6, 0.0, 0.8]), 30.0, 1e-12, 300).unwrap();
        for s in &traj.states {
            assert!((s.j_body[2] - 0.8).abs() < 1e-12);
            assert!((s.j_body[0].hypot(s.j_body[1]) - 0.6).abs() < 1e-10);
        }
    }

    #[test]
    fn space_momentum_is_constant() {
        let traj = integrate_euler(&racket(), &start([0.3, 0.8, -0.5]), 50.0, 1e-12, 100).unwrap();
        let l = traj.space_momentum();
        for v in &l {
            assert!((v - l[0]).norm() < 1e-9, "{}", (v - l[0]).norm());
        }
    }

    #[test]
    fn euler_round_trip() {
        for &(t, p, c) in &[(0.4, 1.0, -2.0), (2.9, -0.5, 0.7), (1.2, 3.0, 3.0)] {
            let r = rotation_from_euler(t, p, c);
            let e = euler_from_rotation(r.to_rotation_matrix().matrix());
            assert!((e[0] - t).abs() < 1e-12 && (e[1] - p).abs() < 1e-12 && (e[2] - c).abs() < 1e-12);
            let col = r.transform_vector(&Vector3::z());
            assert!((col - Vector3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos())).norm() < 1e-14);
        }
    }

    #[test]
    fn flips_match_period_integral() {
        let i = racket();
        let j = [0.01, 1.0, 0.01];
        let t_ref = elliptic_period(&i, j).unwrap();
        let traj = integrate_euler(&i, &start(j), 6.0 * t_ref, 1e-12, 6000).unwrap();
        let flips = tennis_racket_flips(&traj);
        assert!(flips.len() >= 10);
        let p = flip_period(&flips).unwrap();
        assert!((p / t_ref - 1.0).abs() < 1e-3, "{p} vs {t_ref}");
    }

    #[test]
    fn period_integral_for_small_oscillation() {
        // near the x axis: ω = |J| sqrt((1/I_y - 1/I_x)(1/I_z - 1/I_x))
        let i = racket();
        let t = elliptic_period(&i, [1.0, 1e-4, 0.0]).unwrap();
        let w = ((1.0 / 1.5 - 0.5) * (1.0 - 0.5f64)).sqrt();
        assert!((t - 2.0 * std::f64::consts::PI / w).abs() < 1e-6);
    }
}
