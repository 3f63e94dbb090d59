//! Angular-momentum primitives: 3-j symbols, Clebsch-Gordan coefficients,
//! Wigner small-d and D functions, D-function expansions, and a quadrature
//! rule over the Euler-angle volume.
//!
//! Only integer angular momenta are supported. Factorials are tabulated as
//! logarithms up to `4 * J_CAP + 2`, so all routines accept `j <= J_CAP`.
//!
//! Basis functions are normalised as `⟨φ,θ,χ|j,k,m⟩ = √((2j+1)/8π²) D^{j*}_{mk}`,
//! which makes them orthonormal over `sinθ dθ dφ dχ` on the full Euler volume.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Result, RotorError};

/// Largest angular momentum accepted by the factorial tables.
pub const J_CAP: u32 = 128;

/// Volume of the Euler-angle domain, 8π².
pub const EULER_VOLUME: f64 = 8.0 * PI * PI;

fn ln_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = 4 * J_CAP as usize + 2;
        let mut t = Vec::with_capacity(n + 1);
        t.push(0.0);
        let mut acc = 0.0f64;
        for k in 1..=n {
            acc += (k as f64).ln();
            t.push(acc);
        }
        t
    })
}

#[inline]
fn lnf(n: i64) -> f64 {
    debug_assert!(n >= 0);
    ln_factorial_table()[n as usize]
}

#[inline]
fn parity_sign(n: i64) -> f64 {
    if n.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Arguments of a 3-j symbol `(j1 j2 j3; m1 m2 m3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThreeJArgs {
    pub j1: u32,
    pub j2: u32,
    pub j3: u32,
    pub m1: i32,
    pub m2: i32,
    pub m3: i32,
}

impl ThreeJArgs {
    /// Validates the angular momenta. Negative `j`, `j > J_CAP` or `|m| > j`
    /// are malformed input.
    pub fn new(j1: i32, j2: i32, j3: i32, m1: i32, m2: i32, m3: i32) -> Result<Self> {
        for (j, m) in [(j1, m1), (j2, m2), (j3, m3)] {
            if j < 0 || j as u32 > J_CAP {
                return Err(RotorError::QuantumNumbers(format!(
                    "j = {j} outside 0..={J_CAP}"
                )));
            }
            if m.abs() > j {
                return Err(RotorError::QuantumNumbers(format!("|m| = {} > j = {j}", m.abs())));
            }
        }
        Ok(Self {
            j1: j1 as u32,
            j2: j2 as u32,
            j3: j3 as u32,
            m1,
            m2,
            m3,
        })
    }

    pub fn value(&self) -> f64 {
        three_j(self.j1, self.j2, self.j3, self.m1, self.m2, self.m3)
    }
}

fn triangle(j1: i64, j2: i64, j3: i64) -> bool {
    j3 >= (j1 - j2).abs() && j3 <= j1 + j2
}

/// Wigner 3-j symbol by the Racah formula. Returns zero whenever a selection
/// rule fails, including `|m| > j`.
pub fn three_j(j1: u32, j2: u32, j3: u32, m1: i32, m2: i32, m3: i32) -> f64 {
    let (j1, j2, j3) = (j1 as i64, j2 as i64, j3 as i64);
    let (m1, m2, m3) = (m1 as i64, m2 as i64, m3 as i64);
    if m1 + m2 + m3 != 0 || !triangle(j1, j2, j3) {
        return 0.0;
    }
    if m1.abs() > j1 || m2.abs() > j2 || m3.abs() > j3 {
        return 0.0;
    }
    assert!(
        j1.max(j2).max(j3) <= J_CAP as i64,
        "3-j argument exceeds J_CAP = {J_CAP}"
    );
    if m1 == 0 && m2 == 0 && (j1 + j2 + j3) % 2 == 1 {
        return 0.0;
    }
    let ([j1, j2, j3], [m1, m2, m3], sign) = canonical_columns([j1, j2, j3], [m1, m2, m3]);

    let ln_delta = lnf(j1 + j2 - j3) + lnf(j1 - j2 + j3) + lnf(-j1 + j2 + j3) - lnf(j1 + j2 + j3 + 1);
    let ln_m = lnf(j1 + m1) + lnf(j1 - m1) + lnf(j2 + m2) + lnf(j2 - m2) + lnf(j3 + m3) + lnf(j3 - m3);
    let prefactor = 0.5 * (ln_delta + ln_m);

    let k_min = 0.max(j2 - j3 - m1).max(j1 - j3 + m2);
    let k_max = (j1 + j2 - j3).min(j1 - m1).min(j2 + m2);
    let mut sum = 0.0;
    for k in k_min..=k_max {
        let ln_den = lnf(k)
            + lnf(j3 - j2 + k + m1)
            + lnf(j3 - j1 + k - m2)
            + lnf(j1 + j2 - j3 - k)
            + lnf(j1 - k - m1)
            + lnf(j2 - k + m2);
        sum += parity_sign(k) * (prefactor - ln_den).exp();
    }
    sign * parity_sign(j1 - j2 - m3) * sum
}

/// Reorder the columns of a 3-j symbol into a canonical form (columns sorted
/// descending by `(j, m)`, overall m-sign chosen to maximise that order) so
/// that every symmetry-related symbol is evaluated by the same arithmetic.
fn canonical_columns(j: [i64; 3], m: [i64; 3]) -> ([i64; 3], [i64; 3], f64) {
    let odd = parity_sign(j[0] + j[1] + j[2]);
    let sort = |m: [i64; 3]| {
        let mut cols = [(j[0], m[0]), (j[1], m[1]), (j[2], m[2])];
        let mut swaps = 0;
        for a in 0..3 {
            for b in 0..2 - a {
                if cols[b] < cols[b + 1] {
                    cols.swap(b, b + 1);
                    swaps += 1;
                }
            }
        }
        (cols, swaps)
    };
    let (plain, s1) = sort(m);
    let (flipped, s2) = sort([-m[0], -m[1], -m[2]]);
    let self_flip = plain == flipped && (s1 + s2) % 2 == 0;
    if odd < 0.0 && (self_flip || plain[0] == plain[1] || plain[1] == plain[2]) {
        // symbol equals minus itself
        return (j, m, 0.0);
    }
    let (cols, swaps, flip) = if flipped > plain { (flipped, s2, true) } else { (plain, s1, false) };
    let mut sign = if swaps % 2 == 1 { odd } else { 1.0 };
    if flip {
        sign *= odd;
    }
    (
        [cols[0].0, cols[1].0, cols[2].0],
        [cols[0].1, cols[1].1, cols[2].1],
        sign,
    )
}

/// Clebsch-Gordan coefficient `⟨j1 m1 j2 m2 | J M⟩`.
pub fn clebsch_gordan(j1: u32, m1: i32, j2: u32, m2: i32, j: u32, m: i32) -> f64 {
    if m1 + m2 != m {
        return 0.0;
    }
    let phase = parity_sign(j1 as i64 - j2 as i64 + m as i64);
    phase * ((2 * j + 1) as f64).sqrt() * three_j(j1, j2, j, m1, m2, -m)
}

fn check_jmk(j: i32, m: i32, k: i32) -> Result<()> {
    if j < 0 || j as u32 > J_CAP {
        return Err(RotorError::QuantumNumbers(format!("j = {j} outside 0..={J_CAP}")));
    }
    if m.abs() > j || k.abs() > j {
        return Err(RotorError::QuantumNumbers(format!(
            "need |m|, |k| <= j; got j = {j}, m = {m}, k = {k}"
        )));
    }
    Ok(())
}

/// Wigner small-d element `d^j_{mk}(θ)` from the factorial sum.
pub fn wigner_small_d(j: i32, m: i32, k: i32, theta: f64) -> Result<f64> {
    check_jmk(j, m, k)?;
    Ok(small_d_unchecked(j as i64, m as i64, k as i64, theta))
}

fn factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = vec![1.0f64];
        for k in 1..=DIRECT_FACTORIAL_MAX {
            let prev = t[k as usize - 1];
            t.push(prev * k as f64);
        }
        t
    })
}

/// Largest `n` for which `n!` is used directly instead of through logs.
const DIRECT_FACTORIAL_MAX: i64 = 160;

pub(crate) fn small_d_unchecked(j: i64, m: i64, k: i64, theta: f64) -> f64 {
    let c = (0.5 * theta).cos();
    let s = (0.5 * theta).sin();
    let s_min = 0.max(k - m);
    let s_max = (j + k).min(j - m);
    let mut sum = 0.0;
    if 2 * j <= DIRECT_FACTORIAL_MAX {
        let f = factorial_table();
        let fu = |n: i64| f[n as usize];
        let num = (fu(j + m) * fu(j - m)).sqrt() * (fu(j + k) * fu(j - k)).sqrt();
        for n in s_min..=s_max {
            let den = fu(j + k - n) * fu(n) * fu(m - k + n) * fu(j - m - n);
            let pc = (2 * j + k - m - 2 * n) as i32;
            let ps = (m - k + 2 * n) as i32;
            sum += parity_sign(m - k + n) * (num / den) * c.powi(pc) * s.powi(ps);
        }
        return sum;
    }
    let ln_num = 0.5 * (lnf(j + m) + lnf(j - m) + lnf(j + k) + lnf(j - k));
    for n in s_min..=s_max {
        let ln_den = lnf(j + k - n) + lnf(n) + lnf(m - k + n) + lnf(j - m - n);
        let pc = (2 * j + k - m - 2 * n) as i32;
        let ps = (m - k + 2 * n) as i32;
        sum += parity_sign(m - k + n) * (ln_num - ln_den).exp() * c.powi(pc) * s.powi(ps);
    }
    sum
}

/// Wigner D function `D^j_{mk}(φ,θ,χ) = e^{-imφ} d^j_{mk}(θ) e^{-ikχ}`.
#[allow(non_snake_case)]
pub fn wigner_D(j: i32, m: i32, k: i32, phi: f64, theta: f64, chi: f64) -> Result<Complex64> {
    let d = wigner_small_d(j, m, k, theta)?;
    Ok(Complex64::from_polar(d, -(m as f64) * phi - (k as f64) * chi))
}

/// Matrix element `⟨j'k'm'| D^L_{MK} |j k m⟩` in the normalised rotor basis,
/// nonzero only for `m' = m - M`, `k' = k - K`. Evaluated with the triple-D
/// integral:
/// `√((2j+1)(2j'+1)) (-1)^{m-k} (j' L j; m' M -m)(j' L j; k' K -k)`.
#[allow(clippy::too_many_arguments)]
pub fn d_matrix_element(
    jp: u32,
    kp: i32,
    mp: i32,
    l: u32,
    big_m: i32,
    big_k: i32,
    j: u32,
    k: i32,
    m: i32,
) -> f64 {
    if mp != m - big_m || kp != k - big_k {
        return 0.0;
    }
    let a = three_j(jp, l, j, mp, big_m, -m);
    if a == 0.0 {
        return 0.0;
    }
    let b = three_j(jp, l, j, kp, big_k, -k);
    (((2 * j + 1) * (2 * jp + 1)) as f64).sqrt() * parity_sign((m - k) as i64) * a * b
}

/// Finite linear combination `Σ c_{LMK} D^L_{MK}` of Wigner D functions.
///
/// Products are expanded exactly with the Clebsch-Gordan series, so operators
/// built from an expansion carry no truncation error at the basis edge.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DExpansion {
    terms: BTreeMap<(u32, i32, i32), Complex64>,
}

impl DExpansion {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        let mut e = Self::zero();
        e.add_term(0, 0, 0, Complex64::new(c, 0.0));
        e
    }

    pub fn single(l: u32, m: i32, k: i32) -> Self {
        let mut e = Self::zero();
        e.add_term(l, m, k, Complex64::new(1.0, 0.0));
        e
    }

    pub fn add_term(&mut self, l: u32, m: i32, k: i32, c: Complex64) {
        assert!(m.unsigned_abs() <= l && k.unsigned_abs() <= l);
        *self.terms.entry((l, m, k)).or_default() += c;
    }

    pub fn terms(&self) -> impl Iterator<Item = (u32, i32, i32, Complex64)> + '_ {
        self.terms.iter().map(|(&(l, m, k), &c)| (l, m, k, c))
    }

    pub fn max_rank(&self) -> u32 {
        self.terms.keys().map(|&(l, _, _)| l).max().unwrap_or(0)
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self {
            terms: self.terms.iter().map(|(&key, &c)| (key, c * s)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (l, m, k, c) in other.terms() {
            out.add_term(l, m, k, c);
        }
        out
    }

    pub fn product(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (l1, m1, k1, c1) in self.terms() {
            for (l2, m2, k2, c2) in other.terms() {
                let (m, k) = (m1 + m2, k1 + k2);
                let lo = l1.abs_diff(l2).max(m.unsigned_abs()).max(k.unsigned_abs());
                for l in lo..=(l1 + l2) {
                    let w = clebsch_gordan(l1, m1, l2, m2, l, m) * clebsch_gordan(l1, k1, l2, k2, l, k);
                    if w != 0.0 {
                        out.add_term(l, m, k, c1 * c2 * w);
                    }
                }
            }
        }
        out.prune(1e-15);
        out
    }

    /// Drop coefficients with modulus below `tol`.
    pub fn prune(&mut self, tol: f64) {
        self.terms.retain(|_, c| c.norm() > tol);
    }

    pub fn evaluate(&self, phi: f64, theta: f64, chi: f64) -> Complex64 {
        self.terms()
            .map(|(l, m, k, c)| {
                c * Complex64::from_polar(
                    small_d_unchecked(l as i64, m as i64, k as i64, theta),
                    -(m as f64) * phi - (k as f64) * chi,
                )
            })
            .sum()
    }

    /// `⟨j'k'm'| f |j k m⟩` for the function `f` represented by this expansion.
    #[allow(clippy::too_many_arguments)]
    pub fn matrix_element(&self, jp: u32, kp: i32, mp: i32, j: u32, k: i32, m: i32) -> Complex64 {
        let (dm, dk) = (m - mp, k - kp);
        self.terms()
            .filter(|&(_, bm, bk, _)| bm == dm && bk == dk)
            .map(|(l, bm, bk, c)| c * d_matrix_element(jp, kp, mp, l, bm, bk, j, k, m))
            .sum()
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for l in 2..=n {
                let p2 = ((2 * l - 1) as f64 * z * p1 - (l - 1) as f64 * p0) / l as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            z = 0.0;
            dp = 1.0;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Product quadrature over the Euler volume with measure `sinθ dθ dφ dχ`:
/// Gauss-Legendre in `cos θ`, uniform (trapezoid) in the periodic angles.
#[derive(Debug, Clone)]
pub struct EulerQuadrature {
    pub theta: Vec<f64>,
    pub theta_weights: Vec<f64>,
    pub phi: Vec<f64>,
    pub chi: Vec<f64>,
}

impl EulerQuadrature {
    /// Rule for integrands whose D-function content has total rank at most
    /// `band`: `2·band + 4` Gauss-Legendre nodes in θ and `2·band + 3`
    /// uniform nodes in each of φ and χ.
    pub fn for_band(band: u32) -> Self {
        let n_theta = 2 * band as usize + 4;
        let n_per = 2 * band as usize + 3;
        let (x, w) = gauss_legendre(n_theta);
        let theta = x.iter().map(|c| c.acos()).collect();
        let uniform = |n: usize| (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect::<Vec<_>>();
        Self {
            theta,
            theta_weights: w,
            phi: uniform(n_per),
            chi: uniform(n_per),
        }
    }

    pub fn point_count(&self) -> usize {
        self.theta.len() * self.phi.len() * self.chi.len()
    }

    fn periodic_weight(n: usize) -> f64 {
        2.0 * PI / n as f64
    }

    pub fn integrate<F>(&self, f: F) -> Complex64
    where
        F: Fn(f64, f64, f64) -> Complex64,
    {
        let wp = Self::periodic_weight(self.phi.len());
        let wc = Self::periodic_weight(self.chi.len());
        let mut total = Complex64::new(0.0, 0.0);
        for (&th, &wt) in self.theta.iter().zip(&self.theta_weights) {
            let mut inner = Complex64::new(0.0, 0.0);
            for &ph in &self.phi {
                for &ch in &self.chi {
                    inner += f(ph, th, ch);
                }
            }
            total += inner * wt;
        }
        total * wp * wc
    }

    /// Same rule applied to a product `f(φ) g(θ) h(χ)`; the sum factorises.
    pub fn integrate_separable<F, G, H>(&self, f_phi: F, g_theta: G, h_chi: H) -> Complex64
    where
        F: Fn(f64) -> Complex64,
        G: Fn(f64) -> Complex64,
        H: Fn(f64) -> Complex64,
    {
        let wp = Self::periodic_weight(self.phi.len());
        let wc = Self::periodic_weight(self.chi.len());
        let a: Complex64 = self.phi.iter().map(|&p| f_phi(p)).sum::<Complex64>() * wp;
        let c: Complex64 = self.chi.iter().map(|&x| h_chi(x)).sum::<Complex64>() * wc;
        let b: Complex64 = self
            .theta
            .iter()
            .zip(&self.theta_weights)
            .map(|(&t, &w)| g_theta(t) * w)
            .sum();
        a * b * c
    }
}

/// Integrate `f` over the Euler volume with a rule sized for rank `band`.
pub fn euler_quadrature<F>(band: u32, f: F) -> Complex64
where
    F: Fn(f64, f64, f64) -> Complex64,
{
    EulerQuadrature::for_band(band).integrate(f)
}
