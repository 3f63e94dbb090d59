//! Free-rotor Hamiltonians and field-interaction operators.
//!
//! Direction cosines of the body `z` axis are expanded in rank-1 Wigner D
//! functions; their products (`cos²`, `cos·cos'`, `cos³`) are expanded with
//! the Clebsch-Gordan series before any matrix is formed, so every element is
//! exact up to `j_max` and there is no truncation error at the basis edge.
//!
//! For symmetric tops the body `z` axis is the symmetry axis: prolate tops
//! use `A = B`, oblate tops `B = C`, with energies
//! `A j(j+1) + (C-A) k²` and `C j(j+1) + (A-C) k²` respectively.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSet, RotorState, TopClass};
use crate::error::{Result, RotorError};
use crate::operator::Operator;
use crate::wigner::DExpansion;

type C = Complex64;

/// Nuclear-spin statistical weights by parity of `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinWeights {
    pub even: f64,
    pub odd: f64,
}

impl Default for SpinWeights {
    fn default() -> Self {
        Self { even: 1.0, odd: 1.0 }
    }
}

impl SpinWeights {
    pub fn weight(&self, j: u32) -> f64 {
        if j % 2 == 0 {
            self.even
        } else {
            self.odd
        }
    }
}

/// Rotor parameters. Rotational constants and interaction strengths are in
/// rad/ps (see [`crate::units`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotorSpec {
    pub top: TopClass,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub mu0: f64,
    pub alpha_par: f64,
    pub alpha_perp: f64,
    pub beta_par: f64,
    pub beta_perp: f64,
    pub centrifugal_d: Option<f64>,
    pub spin_weights: SpinWeights,
    /// Keep the isotropic `α⊥` identity contribution (pure energy shift).
    pub keep_isotropic: bool,
}

impl RotorSpec {
    fn with_constants(top: TopClass, a: f64, b: f64, c: f64) -> Self {
        Self {
            top,
            a,
            b,
            c,
            mu0: 0.0,
            alpha_par: 0.0,
            alpha_perp: 0.0,
            beta_par: 0.0,
            beta_perp: 0.0,
            centrifugal_d: None,
            spin_weights: SpinWeights::default(),
            keep_isotropic: true,
        }
    }

    pub fn linear(b: f64) -> Self {
        Self::with_constants(TopClass::Linear, b, b, b)
    }

    /// Prolate symmetric top, `A = B < C`.
    pub fn prolate(a: f64, c: f64) -> Self {
        Self::with_constants(TopClass::ProlateSymmetric, a, a, c)
    }

    /// Oblate symmetric top, `A < B = C`.
    pub fn oblate(a: f64, c: f64) -> Self {
        Self::with_constants(TopClass::OblateSymmetric, a, c, c)
    }

    pub fn spherical(b: f64) -> Self {
        Self::with_constants(TopClass::Spherical, b, b, b)
    }

    pub fn asymmetric(a: f64, b: f64, c: f64) -> Self {
        Self::with_constants(TopClass::Asymmetric, a, b, c)
    }

    /// Non-linear rotor classified from its constants.
    pub fn classified(a: f64, b: f64, c: f64) -> Self {
        Self::with_constants(TopClass::classify(a, b, c, 1e-12), a, b, c)
    }

    pub fn with_dipole(mut self, mu0: f64) -> Self {
        self.mu0 = mu0;
        self
    }

    pub fn with_polarizability(mut self, alpha_par: f64, alpha_perp: f64) -> Self {
        self.alpha_par = alpha_par;
        self.alpha_perp = alpha_perp;
        self
    }

    pub fn with_hyperpolarizability(mut self, beta_par: f64, beta_perp: f64) -> Self {
        self.beta_par = beta_par;
        self.beta_perp = beta_perp;
        self
    }

    pub fn with_spin_weights(mut self, even: f64, odd: f64) -> Self {
        self.spin_weights = SpinWeights { even, odd };
        self
    }

    pub fn with_centrifugal(mut self, d: f64) -> Self {
        self.centrifugal_d = Some(d);
        self
    }

    pub fn delta_alpha(&self) -> f64 {
        self.alpha_par - self.alpha_perp
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.a,
            self.b,
            self.c,
            self.mu0,
            self.alpha_par,
            self.alpha_perp,
            self.beta_par,
            self.beta_perp,
            self.centrifugal_d.unwrap_or(0.0),
            self.spin_weights.even,
            self.spin_weights.odd,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(RotorError::InvalidInput("non-finite rotor parameter".into()));
        }
        if !(self.a > 0.0 && self.a <= self.b && self.b <= self.c) {
            return Err(RotorError::InvalidInput(format!(
                "rotational constants must satisfy 0 < A <= B <= C, got ({}, {}, {})",
                self.a, self.b, self.c
            )));
        }
        if self.spin_weights.even < 0.0 || self.spin_weights.odd < 0.0 {
            return Err(RotorError::InvalidInput("spin weights must be >= 0".into()));
        }
        if self.centrifugal_d.is_some() && !self.top.is_linear() {
            return Err(RotorError::InvalidInput(
                "centrifugal distortion is only supported for linear rotors".into(),
            ));
        }
        let eq = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs());
        let ok = match self.top {
            TopClass::Linear | TopClass::Spherical => eq(self.a, self.b) && eq(self.b, self.c),
            TopClass::ProlateSymmetric => eq(self.a, self.b),
            TopClass::OblateSymmetric => eq(self.b, self.c),
            TopClass::Asymmetric => true,
        };
        if !ok {
            return Err(RotorError::InvalidInput(format!(
                "constants ({}, {}, {}) inconsistent with {:?}",
                self.a, self.b, self.c, self.top
            )));
        }
        Ok(())
    }

    /// Sign convention check for auto-classified rotors: `Δα > 0` for linear
    /// and prolate tops, `Δα < 0` for oblate tops.
    pub fn anisotropy_sign_consistent(&self) -> bool {
        match self.top {
            TopClass::Linear | TopClass::ProlateSymmetric => self.delta_alpha() > 0.0,
            TopClass::OblateSymmetric => self.delta_alpha() < 0.0,
            _ => true,
        }
    }
}

/// Space-fixed axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpaceAxis {
    X,
    Y,
    Z,
}

impl SpaceAxis {
    pub const ALL: [SpaceAxis; 3] = [SpaceAxis::X, SpaceAxis::Y, SpaceAxis::Z];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// `cos θ_{zK}` as a D-function expansion, matching the third row
/// `(sinθ cosφ, sinθ sinφ, cosθ)` of the space-to-body rotation matrix.
pub fn direction_cosine_expansion(axis: SpaceAxis) -> DExpansion {
    let mut e = DExpansion::zero();
    let s = FRAC_1_SQRT_2;
    match axis {
        SpaceAxis::Z => e.add_term(1, 0, 0, C::new(1.0, 0.0)),
        SpaceAxis::X => {
            e.add_term(1, -1, 0, C::new(s, 0.0));
            e.add_term(1, 1, 0, C::new(-s, 0.0));
        }
        SpaceAxis::Y => {
            e.add_term(1, -1, 0, C::new(0.0, -s));
            e.add_term(1, 1, 0, C::new(0.0, -s));
        }
    }
    e
}

pub fn free_hamiltonian(spec: &RotorSpec, basis: &Arc<BasisSet>) -> Result<Operator> {
    spec.validate()?;
    if spec.top != basis.top() {
        return Err(RotorError::BasisMismatch(format!(
            "rotor is {:?} but basis is {:?}",
            spec.top,
            basis.top()
        )));
    }
    let jj = |s: &RotorState| (s.j * (s.j + 1)) as f64;
    let k2 = |s: &RotorState| (s.k * s.k) as f64;
    let (a, b, c) = (spec.a, spec.b, spec.c);
    let diag: Box<dyn Fn(&RotorState) -> f64> = match spec.top {
        TopClass::Linear => {
            let d = spec.centrifugal_d.unwrap_or(0.0);
            Box::new(move |s| b * jj(s) - d * jj(s) * jj(s))
        }
        TopClass::Spherical => Box::new(move |s| b * jj(s)),
        TopClass::ProlateSymmetric => Box::new(move |s| a * jj(s) + (c - a) * k2(s)),
        TopClass::OblateSymmetric => Box::new(move |s| c * jj(s) + (a - c) * k2(s)),
        TopClass::Asymmetric => Box::new(move |s| 0.5 * (a + b) * (jj(s) - k2(s)) + c * k2(s)),
    };
    let mut entries: Vec<(usize, usize, C)> = basis
        .states()
        .iter()
        .enumerate()
        .map(|(i, s)| (i, i, C::new(diag(s), 0.0)))
        .collect();
    if spec.top == TopClass::Asymmetric && a != b {
        // ⟨j,k+2,m|H|j,k,m⟩ = (A-B)/4 √[(j(j+1)-k(k+1))(j(j+1)-(k+1)(k+2))]
        for (i, s) in basis.states().iter().enumerate() {
            let up = RotorState::new(s.j, s.k + 2, s.m);
            if let Some(t) = basis.index_of(up) {
                let x = jj(s);
                let kk = s.k as f64;
                let v = 0.25 * (a - b) * ((x - kk * (kk + 1.0)) * (x - (kk + 1.0) * (kk + 2.0))).sqrt();
                entries.push((i.min(t), i.max(t), C::new(v, 0.0)));
            }
        }
    }
    Ok(Operator::from_upper(basis.clone(), entries))
}

pub fn direction_cosine(basis: &Arc<BasisSet>, axis: SpaceAxis) -> Operator {
    Operator::from_expansion(basis.clone(), &direction_cosine_expansion(axis))
}

/// `cos θ_{zK} cos θ_{zK'}` from its rank-0 + rank-2 expansion.
pub fn cos_product(basis: &Arc<BasisSet>, k: SpaceAxis, kp: SpaceAxis) -> Operator {
    let e = direction_cosine_expansion(k).product(&direction_cosine_expansion(kp));
    Operator::from_expansion(basis.clone(), &e)
}

/// `cos³ θ_{zZ}` from its rank-1 + rank-3 expansion.
pub fn cos_cubed(basis: &Arc<BasisSet>) -> Result<Operator> {
    if basis.top() == TopClass::Asymmetric {
        return Err(RotorError::UnsupportedTop(
            "cos³ operator is defined for linear and symmetric tops".into(),
        ));
    }
    let z = direction_cosine_expansion(SpaceAxis::Z);
    Ok(Operator::from_expansion(basis.clone(), &z.product(&z).product(&z)))
}

pub fn angular_momentum_squared(basis: &Arc<BasisSet>) -> Operator {
    let d: Vec<f64> = basis.states().iter().map(|s| (s.j * (s.j + 1)) as f64).collect();
    Operator::from_diagonal(basis.clone(), &d)
}

/// Space-fixed `J_Z` (diagonal in `m`).
pub fn space_jz(basis: &Arc<BasisSet>) -> Operator {
    let d: Vec<f64> = basis.states().iter().map(|s| s.m as f64).collect();
    Operator::from_diagonal(basis.clone(), &d)
}

/// Fixed operators that interaction Hamiltonians are linear combinations of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    Cos(SpaceAxis),
    /// Unordered pair, stored with `first <= second`.
    CosProduct(SpaceAxis, SpaceAxis),
    CosCubed,
    Identity,
}

impl Channel {
    pub fn product(a: SpaceAxis, b: SpaceAxis) -> Self {
        Channel::CosProduct(a.min(b), a.max(b))
    }

    pub fn build(self, basis: &Arc<BasisSet>) -> Result<Operator> {
        Ok(match self {
            Channel::Cos(k) => direction_cosine(basis, k),
            Channel::CosProduct(a, b) => cos_product(basis, a, b),
            Channel::CosCubed => cos_cubed(basis)?,
            Channel::Identity => Operator::identity(basis.clone()),
        })
    }
}

/// Channel coefficients, accumulated in a deterministic order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Coefficients(pub BTreeMap<Channel, f64>);

impl Coefficients {
    pub fn add(&mut self, ch: Channel, v: f64) {
        if v != 0.0 {
            *self.0.entry(ch).or_default() += v;
        }
    }

    pub fn merge(&mut self, other: &Coefficients) {
        for (&ch, &v) in &other.0 {
            self.add(ch, v);
        }
    }

    pub fn get(&self, ch: Channel) -> f64 {
        self.0.get(&ch).copied().unwrap_or(0.0)
    }

    pub fn to_operator(&self, basis: &Arc<BasisSet>) -> Result<Operator> {
        let built: Vec<(f64, Operator)> = self
            .0
            .iter()
            .map(|(ch, &v)| ch.build(basis).map(|op| (v, op)))
            .collect::<Result<_>>()?;
        let refs: Vec<(f64, &Operator)> = built.iter().map(|(v, op)| (*v, op)).collect();
        Operator::combine(basis.clone(), &refs)
    }
}

fn pairs() -> [(SpaceAxis, SpaceAxis); 3] {
    [
        (SpaceAxis::X, SpaceAxis::Y),
        (SpaceAxis::X, SpaceAxis::Z),
        (SpaceAxis::Y, SpaceAxis::Z),
    ]
}

/// Instantaneous second-order interaction with field `E = (E_X, E_Y, E_Z)`:
/// `-Σ μ₀ cos_K E_K - Σ (E_K²/2)(Δα cos²_K + α⊥) - Σ_{K<K'} E_K E_K' Δα cos_K cos_K'`.
pub fn resonant_coefficients(spec: &RotorSpec, field: [f64; 3]) -> Coefficients {
    let mut out = Coefficients::default();
    let da = spec.delta_alpha();
    for k in SpaceAxis::ALL {
        let e = field[k.index()];
        out.add(Channel::Cos(k), -spec.mu0 * e);
        out.add(Channel::product(k, k), -0.5 * e * e * da);
        if spec.keep_isotropic {
            out.add(Channel::Identity, -0.5 * e * e * spec.alpha_perp);
        }
    }
    for (k, kp) in pairs() {
        out.add(Channel::product(k, kp), -field[k.index()] * field[kp.index()] * da);
    }
    out
}

/// Cycle-averaged interaction for envelopes `ℰ_K` and phases `φ_K`:
/// `-¼ Σ ℰ_K²(Δα cos²_K + α⊥) - ½ Σ_{K<K'} ℰ_K ℰ_K' cos(φ_K-φ_K') Δα cos_K cos_K'`.
pub fn averaged_coefficients(spec: &RotorSpec, envelopes: [f64; 3], phases: [f64; 3]) -> Coefficients {
    let mut out = Coefficients::default();
    let da = spec.delta_alpha();
    for k in SpaceAxis::ALL {
        let e = envelopes[k.index()];
        out.add(Channel::product(k, k), -0.25 * e * e * da);
        if spec.keep_isotropic {
            out.add(Channel::Identity, -0.25 * e * e * spec.alpha_perp);
        }
    }
    for (k, kp) in pairs() {
        let (i, j) = (k.index(), kp.index());
        let c = phase_cos(phases[i] - phases[j]);
        out.add(Channel::product(k, kp), -0.5 * envelopes[i] * envelopes[j] * c * da);
    }
    out
}

/// Cycle-averaged two-color (ω + 2ω, Z-polarised) interaction for a linear
/// molecule:
/// `-¼(Δα cos² + α⊥)(ℰ₁²+ℰ₂²) - (cos φ/8)[(β∥-3β⊥)cos³ + 3β⊥ cos]ℰ₁²ℰ₂`.
pub fn two_color_coefficients(spec: &RotorSpec, e1: f64, e2: f64, phi: f64) -> Coefficients {
    let mut out = Coefficients::default();
    let i2 = e1 * e1 + e2 * e2;
    out.add(Channel::product(SpaceAxis::Z, SpaceAxis::Z), -0.25 * spec.delta_alpha() * i2);
    if spec.keep_isotropic {
        out.add(Channel::Identity, -0.25 * spec.alpha_perp * i2);
    }
    let odd = -phase_cos(phi) / 8.0 * e1 * e1 * e2;
    out.add(Channel::CosCubed, odd * (spec.beta_par - 3.0 * spec.beta_perp));
    out.add(Channel::Cos(SpaceAxis::Z), odd * 3.0 * spec.beta_perp);
    out
}

/// `cos` of a relative phase, exactly zero at odd multiples of π/2 (which are
/// not representable in floating point).
pub fn phase_cos(phase: f64) -> f64 {
    let c = phase.cos();
    if c.abs() < 1e-15 {
        0.0
    } else {
        c
    }
}

pub fn resonant_interaction(spec: &RotorSpec, basis: &Arc<BasisSet>, field: [f64; 3]) -> Result<Operator> {
    resonant_coefficients(spec, field).to_operator(basis)
}

pub fn averaged_interaction(
    spec: &RotorSpec,
    basis: &Arc<BasisSet>,
    envelopes: [f64; 3],
    phases: [f64; 3],
) -> Result<Operator> {
    if envelopes.iter().any(|&e| e < 0.0) {
        return Err(RotorError::InvalidInput("envelope amplitudes must be >= 0".into()));
    }
    averaged_coefficients(spec, envelopes, phases).to_operator(basis)
}

pub fn two_color_interaction(
    spec: &RotorSpec,
    basis: &Arc<BasisSet>,
    e1: f64,
    e2: f64,
    phi: f64,
) -> Result<Operator> {
    if !basis.top().is_linear() || !spec.top.is_linear() {
        return Err(RotorError::UnsupportedTop(
            "two-color interaction is defined for linear molecules".into(),
        ));
    }
    if e1 < 0.0 || e2 < 0.0 {
        return Err(RotorError::InvalidInput("envelope amplitudes must be >= 0".into()));
    }
    two_color_coefficients(spec, e1, e2, phi).to_operator(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigh, max_abs};

    fn lin(j_max: u32) -> Arc<BasisSet> {
        Arc::new(BasisSet::new(TopClass::Linear, j_max))
    }

    fn idx(b: &BasisSet, j: u32, k: i32, m: i32) -> usize {
        b.index_of(RotorState::new(j, k, m)).unwrap()
    }

    #[test]
    fn linear_spectrum() {
        let b = lin(4);
        let h = free_hamiltonian(&RotorSpec::linear(1.3), &b).unwrap();
        assert!(h.is_diagonal());
        assert_eq!(h.element(idx(&b, 2, 0, 1), idx(&b, 2, 0, 1)).re, 6.0 * 1.3);
        let hd = free_hamiltonian(&RotorSpec::linear(1.0).with_centrifugal(0.01), &b).unwrap();
        assert!((hd.element(idx(&b, 2, 0, 0), idx(&b, 2, 0, 0)).re - (6.0 - 0.36)).abs() < 1e-15);
    }

    #[test]
    fn prolate_and_oblate() {
        let b = Arc::new(BasisSet::new(TopClass::ProlateSymmetric, 2));
        let h = free_hamiltonian(&RotorSpec::prolate(1.0, 4.0), &b).unwrap();
        assert_eq!(h.element(idx(&b, 1, 1, 0), idx(&b, 1, 1, 0)).re, 5.0);
        assert_eq!(h.element(idx(&b, 1, -1, 0), idx(&b, 1, -1, 0)).re, 5.0);
        let b = Arc::new(BasisSet::new(TopClass::OblateSymmetric, 2));
        let h = free_hamiltonian(&RotorSpec::oblate(1.0, 4.0), &b).unwrap();
        assert_eq!(h.element(idx(&b, 2, 2, 0), idx(&b, 2, 2, 0)).re, 24.0 - 12.0);
    }

    #[test]
    fn asymmetric_j1_levels() {
        let (a, bb, c) = (1.0, 2.5, 4.0);
        let b = Arc::new(BasisSet::new(TopClass::Asymmetric, 1));
        let h = free_hamiltonian(&RotorSpec::asymmetric(a, bb, c), &b).unwrap();
        let shell: Vec<usize> = b.shell(1).filter(|&i| b.state_at(i).m == 0).collect();
        let (vals, _) = eigh(&h.dense_block(&shell));
        let mut expect = [a + bb, a + c, bb + c];
        expect.sort_by(f64::total_cmp);
        for (v, e) in vals.iter().zip(expect) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_class_rejected() {
        let b = lin(2);
        assert!(free_hamiltonian(&RotorSpec::asymmetric(1.0, 2.0, 3.0), &b).is_err());
        assert!(RotorSpec::asymmetric(3.0, 2.0, 1.0).validate().is_err());
    }

    #[test]
    fn direction_cosine_elements() {
        let b = lin(3);
        let cz = direction_cosine(&b, SpaceAxis::Z);
        assert!((cz.element(0, idx(&b, 1, 0, 0)).re - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(cz.element(0, 0).re, 0.0);
        let sel = cz.selection();
        assert!(sel.dk.iter().all(|&d| d == 0) && sel.dm.iter().all(|&d| d == 0));
        assert!(sel.dj.iter().all(|&d| d.abs() == 1));
    }

    #[test]
    fn symmetric_top_cos_has_delta_j_zero() {
        let b = Arc::new(BasisSet::new(TopClass::ProlateSymmetric, 2));
        let cz = direction_cosine(&b, SpaceAxis::Z);
        let s = idx(&b, 1, 1, 1);
        assert!(cz.element(s, s).re.abs() > 0.1);
        let s0 = idx(&b, 1, 1, 0);
        assert_eq!(cz.element(s0, s0).re, 0.0);
    }

    #[test]
    fn cos_squared_elements() {
        let b = lin(4);
        let c2 = cos_product(&b, SpaceAxis::Z, SpaceAxis::Z);
        assert!((c2.element(0, 0).re - 1.0 / 3.0).abs() < 1e-15);
        assert!((c2.element(idx(&b, 2, 0, 0), 0).re - 2.0 / (3.0 * 5f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn cos_squared_sum_is_identity() {
        for top in [TopClass::Linear, TopClass::Asymmetric] {
            let b = Arc::new(BasisSet::new(top, 4));
            let s = Operator::combine(
                b.clone(),
                &[
                    (1.0, &cos_product(&b, SpaceAxis::X, SpaceAxis::X)),
                    (1.0, &cos_product(&b, SpaceAxis::Y, SpaceAxis::Y)),
                    (1.0, &cos_product(&b, SpaceAxis::Z, SpaceAxis::Z)),
                ],
            )
            .unwrap();
            assert!(s.max_abs_diff(&Operator::identity(b.clone())) < 1e-12);
        }
    }

    #[test]
    fn cos_cubed_elements() {
        let b = lin(5);
        let c3 = cos_cubed(&b).unwrap();
        assert!((c3.element(idx(&b, 1, 0, 0), 0).re - 3.0 / (5.0 * 3f64.sqrt())).abs() < 1e-15);
        assert_eq!(c3.element(0, 0).re, 0.0);
        assert!(c3.element(idx(&b, 3, 0, 0), 0).norm() > 1e-3);
        let asym = Arc::new(BasisSet::new(TopClass::Asymmetric, 2));
        assert!(cos_cubed(&asym).is_err());
    }

    /// Products of truncated cos θ matrices are wrong in the top shell; the
    /// expansion-built operator is not.
    #[test]
    fn truncated_product_differs_at_edge() {
        let b = lin(3);
        let c = direction_cosine(&b, SpaceAxis::Z).to_dense();
        let prod = &c * &c;
        let exact = cos_product(&b, SpaceAxis::Z, SpaceAxis::Z).to_dense();
        let top = idx(&b, 3, 0, 0);
        let low = idx(&b, 1, 0, 0);
        assert!((prod[(low, low)] - exact[(low, low)]).norm() < 1e-14);
        assert!((prod[(top, top)] - exact[(top, top)]).norm() > 0.1);
    }

    #[test]
    fn resonant_reductions() {
        let b = lin(3);
        let spec = RotorSpec::linear(1.0).with_dipole(0.7);
        let zero = resonant_interaction(&spec, &b, [0.0; 3]).unwrap();
        assert_eq!(zero.nnz(), 0);
        let hz = resonant_interaction(&spec, &b, [0.0, 0.0, 2.0]).unwrap();
        let expect = direction_cosine(&b, SpaceAxis::Z).scaled(-1.4);
        assert!(hz.max_abs_diff(&expect) < 1e-15);
        let spec = spec.with_polarizability(3.0, 1.0);
        let h = resonant_interaction(&spec, &b, [0.3, -1.1, 0.8]).unwrap();
        assert_eq!(h.max_hermiticity_error(), 0.0);
    }

    #[test]
    fn averaged_polarizations() {
        let b = lin(3);
        let spec = RotorSpec::linear(1.0).with_polarizability(3.0, 1.0);
        let circ = averaged_coefficients(&spec, [1.0, 1.0, 0.0], [std::f64::consts::FRAC_PI_2, 0.0, 0.0]);
        assert_eq!(circ.get(Channel::product(SpaceAxis::X, SpaceAxis::Y)), 0.0);
        let hz = averaged_interaction(&spec, &b, [0.0, 0.0, 2.0], [0.0; 3]).unwrap();
        let expect = Operator::combine(
            b.clone(),
            &[
                (-1.0 * 2.0, &cos_product(&b, SpaceAxis::Z, SpaceAxis::Z)),
                (-1.0, &Operator::identity(b.clone())),
            ],
        )
        .unwrap();
        assert!(hz.max_abs_diff(&expect) < 1e-15);
        assert_eq!(averaged_interaction(&spec, &b, [0.0; 3], [0.0; 3]).unwrap().nnz(), 0);
    }

    /// A linearly polarised field along (X+Z)/√2 must give the same spectrum
    /// as the same field along Z.
    #[test]
    fn averaged_interaction_is_rotation_invariant() {
        let b = lin(6);
        let spec = RotorSpec::linear(1.0).with_polarizability(3.0, 1.0);
        let e = 2.0;
        let hz = averaged_interaction(&spec, &b, [0.0, 0.0, e], [0.0; 3]).unwrap();
        let s = e * FRAC_1_SQRT_2;
        let hxz = averaged_interaction(&spec, &b, [s, 0.0, s], [0.0; 3]).unwrap();
        // rotations act within each j shell, so truncation commutes with them
        let (a, _) = eigh(&hz.to_dense());
        let (c, _) = eigh(&hxz.to_dense());
        for (x, y) in a.iter().zip(&c) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
        // the m-conserving Z form commutes with J_Z; the tilted one does not
        let jz = space_jz(&b).to_dense();
        let comm = |h: &Operator| {
            let d = h.to_dense();
            max_abs(&(&d * &jz - &jz * &d))
        };
        assert!(comm(&hz) < 1e-12);
        assert!(comm(&hxz) > 1e-3);
    }

    #[test]
    fn two_color_terms() {
        let b = lin(5);
        let spec = RotorSpec::linear(1.0)
            .with_polarizability(3.0, 1.0)
            .with_hyperpolarizability(2.0, 0.5);
        let c = two_color_coefficients(&spec, 1.0, 0.5, std::f64::consts::FRAC_PI_2);
        assert_eq!(c.get(Channel::CosCubed), 0.0);
        assert_eq!(c.get(Channel::Cos(SpaceAxis::Z)), 0.0);
        let c = two_color_coefficients(&spec, 1.0, 0.0, 0.0);
        assert_eq!(c.get(Channel::CosCubed), 0.0);
        let spec0 = spec.clone().with_hyperpolarizability(2.0, 0.0);
        let c = two_color_coefficients(&spec0, 1.0, 0.5, 0.0);
        assert_eq!(c.get(Channel::CosCubed), -0.5 / 8.0 * 2.0);
        assert_eq!(c.get(Channel::Cos(SpaceAxis::Z)), 0.0);
        let asym = Arc::new(BasisSet::new(TopClass::Asymmetric, 1));
        assert!(two_color_interaction(&spec, &asym, 1.0, 1.0, 0.0).is_err());
        assert!(two_color_interaction(&spec, &b, 1.0, 1.0, 0.3).is_ok());
    }
}
