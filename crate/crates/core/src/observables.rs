//! Alignment and orientation metrics, angular densities and feature
//! detection on recorded signals.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSet, TopClass};
use crate::dynamics::{Probe, QuantumState, Trajectory};
use crate::error::{Result, RotorError};
use crate::hamiltonian::{angular_momentum_squared, cos_product, direction_cosine, free_hamiltonian, RotorSpec, SpaceAxis};
use crate::linalg::eigh;
use crate::operator::Operator;
use crate::wigner::wigner_small_d;

type C = Complex64;

/// Probe names used by [`AlignmentOperators::probes`], in record order.
pub const ALIGNMENT_PROBES: [&str; 8] = ["cos_x", "cos_y", "cos_z", "cos2_x", "cos2_y", "cos2_z", "energy", "j2"];

/// `Tr[ρ O]` or `⟨ψ|O|ψ⟩`.
pub fn expectation(op: &Operator, state: &QuantumState) -> Result<f64> {
    state.expectation(op)
}

/// Reporting thresholds for orientation and planar alignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub oriented: f64,
    pub planar: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            oriented: 0.9,
            planar: 0.1,
        }
    }
}

/// Per-axis `⟨cos θ_{zΓ}⟩`, `⟨cos² θ_{zΓ}⟩`, `⟨H₀⟩` and `⟨J²⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub cos: [f64; 3],
    pub cos2: [f64; 3],
    pub energy: f64,
    pub j2: f64,
}

impl AlignmentRecord {
    /// Values in [`ALIGNMENT_PROBES`] order.
    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != ALIGNMENT_PROBES.len() {
            return Err(RotorError::InvalidInput(format!(
                "alignment record needs {} values, got {}",
                ALIGNMENT_PROBES.len(),
                v.len()
            )));
        }
        Ok(Self {
            cos: [v[0], v[1], v[2]],
            cos2: [v[3], v[4], v[5]],
            energy: v[6],
            j2: v[7],
        })
    }

    /// `Σ_Γ ⟨cos² θ_{zΓ}⟩ - 1`.
    pub fn sum_rule_residual(&self) -> f64 {
        self.cos2.iter().sum::<f64>() - 1.0
    }

    pub fn is_oriented(&self, t: &Thresholds) -> bool {
        self.cos.iter().any(|c| c.abs() >= t.oriented)
    }

    /// Some axis has `⟨cos²⟩ <= planar`.
    pub fn is_planar(&self, t: &Thresholds) -> bool {
        self.cos2.iter().any(|c| *c <= t.planar)
    }
}

/// The eight operators behind an [`AlignmentRecord`].
#[derive(Debug, Clone)]
pub struct AlignmentOperators {
    pub cos: [Operator; 3],
    pub cos2: [Operator; 3],
    pub h0: Operator,
    pub j2: Operator,
}

impl AlignmentOperators {
    pub fn new(spec: &RotorSpec, basis: &Arc<BasisSet>) -> Result<Self> {
        let [x, y, z] = SpaceAxis::ALL;
        Ok(Self {
            cos: [direction_cosine(basis, x), direction_cosine(basis, y), direction_cosine(basis, z)],
            cos2: [cos_product(basis, x, x), cos_product(basis, y, y), cos_product(basis, z, z)],
            h0: free_hamiltonian(spec, basis)?,
            j2: angular_momentum_squared(basis),
        })
    }

    pub fn probes(&self) -> Vec<Probe> {
        let ops = self.cos.iter().chain(&self.cos2).chain([&self.h0, &self.j2]);
        ALIGNMENT_PROBES.iter().zip(ops).map(|(n, op)| Probe::new(*n, op.clone())).collect()
    }

    pub fn record(&self, state: &QuantumState) -> Result<AlignmentRecord> {
        let ops = self.cos.iter().chain(&self.cos2).chain([&self.h0, &self.j2]);
        let v = ops.map(|op| state.expectation(op)).collect::<Result<Vec<_>>>()?;
        AlignmentRecord::from_values(&v)
    }
}

pub fn alignment_record(state: &QuantumState, spec: &RotorSpec, basis: &Arc<BasisSet>) -> Result<AlignmentRecord> {
    state.basis().require_same(basis)?;
    AlignmentOperators::new(spec, basis)?.record(state)
}

/// Records from a trajectory propagated with [`AlignmentOperators::probes`]
/// (extra probes are ignored).
pub fn alignment_series(traj: &Trajectory) -> Result<Vec<(f64, AlignmentRecord)>> {
    let cols = ALIGNMENT_PROBES
        .iter()
        .map(|n| {
            traj.names
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| RotorError::InvalidInput(format!("trajectory has no `{n}` probe")))
        })
        .collect::<Result<Vec<_>>>()?;
    traj.times
        .iter()
        .zip(&traj.values)
        .map(|(t, row)| {
            let v: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
            Ok((*t, AlignmentRecord::from_values(&v)?))
        })
        .collect()
}

/// Probability density `ρ(θ, φ)` of the molecular axis on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    pub thetas: Vec<f64>,
    pub phis: Vec<f64>,
    /// `values[i][j]` at `(thetas[i], phis[j])`.
    pub values: Vec<Vec<f64>>,
}

impl DensityTable {
    /// `n_theta + 1` points on `[0, π]` and `n_phi + 1` on `[0, 2π]`.
    pub fn sphere_grid(n_theta: usize, n_phi: usize) -> (Vec<f64>, Vec<f64>) {
        let th = (0..=n_theta).map(|i| PI * i as f64 / n_theta as f64).collect();
        let ph = (0..=n_phi).map(|i| 2.0 * PI * i as f64 / n_phi as f64).collect();
        (th, ph)
    }

    /// `∫ ρ sinθ dθ dφ` by composite Simpson (trapezoid if a grid has an
    /// even number of points or is not uniform).
    pub fn integral(&self) -> f64 {
        let wt = quadrature_weights(&self.thetas);
        let wp = quadrature_weights(&self.phis);
        self.values
            .iter()
            .zip(&self.thetas)
            .zip(&wt)
            .map(|((row, th), a)| a * th.sin() * row.iter().zip(&wp).map(|(v, b)| v * b).sum::<f64>())
            .sum()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

fn quadrature_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let h = (x[n - 1] - x[0]) / (n - 1) as f64;
    let uniform = x.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h.abs().max(1.0));
    if uniform && n % 2 == 1 && n >= 3 {
        (0..n)
            .map(|i| {
                let c = if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * h / 3.0
            })
            .collect()
    } else {
        (0..n)
            .map(|i| {
                let left = if i > 0 { x[i] - x[i - 1] } else { 0.0 };
                let right = if i + 1 < n { x[i + 1] - x[i] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }
}

/// Axis density `⟨Ω|ρ|Ω⟩` for linear-molecule states, with
/// `⟨θ,φ|j,m⟩ = Y_{jm}(θ,φ)`. Normalised so that `∫ρ dΩ = 1`.
pub fn angular_distribution(state: &QuantumState, thetas: &[f64], phis: &[f64]) -> Result<DensityTable> {
    let basis = state.basis();
    if basis.top() != TopClass::Linear {
        return Err(RotorError::UnsupportedTop(
            "angular distributions are only defined for linear molecules".into(),
        ));
    }
    let members: Vec<(f64, Vec<C>)> = match state {
        QuantumState::Pure(p) => vec![(1.0, p.amplitudes().to_vec())],
        QuantumState::Ensemble(e) => e.weights().iter().copied().zip(e.members().iter().cloned()).collect(),
        QuantumState::Mixed(m) => {
            let (vals, vecs) = eigh(m.rho());
            vals.iter()
                .enumerate()
                .filter(|(_, w)| w.abs() > 1e-15)
                .map(|(p, w)| (*w, vecs.column(p).iter().copied().collect()))
                .collect()
        }
    };
    let states = basis.states();
    let mut values = Vec::with_capacity(thetas.len());
    for &th in thetas {
        // Y_{jm}(θ, 0) for every basis state at this θ
        let y0 = states
            .iter()
            .map(|s| {
                let n = ((2 * s.j + 1) as f64 / (4.0 * PI)).sqrt();
                Ok(n * wigner_small_d(s.j as i32, s.m, 0, th)?)
            })
            .collect::<Result<Vec<f64>>>()?;
        let row = phis
            .iter()
            .map(|&ph| {
                members
                    .iter()
                    .map(|(w, psi)| {
                        let amp: C = psi
                            .iter()
                            .zip(states)
                            .zip(&y0)
                            .filter(|((c, _), _)| c.norm_sqr() > 0.0)
                            .map(|((c, s), y)| c * C::from_polar(*y, s.m as f64 * ph))
                            .sum();
                        w * amp.norm_sqr()
                    })
                    .sum()
            })
            .collect();
        values.push(row);
    }
    Ok(DensityTable {
        thetas: thetas.to_vec(),
        phis: phis.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Peak,
    Trough,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub time: f64,
    pub value: f64,
    pub kind: FeatureKind,
    pub prominence: f64,
}

/// Interior local extrema whose topographic prominence is at least
/// `min_prominence`. Flat tops report their first sample.
pub fn detect_features(times: &[f64], signal: &[f64], min_prominence: f64) -> Vec<Feature> {
    let n = signal.len().min(times.len());
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        let v = signal[i];
        let mut end = i;
        while end + 1 < n && signal[end + 1] == v {
            end += 1;
        }
        if end + 1 >= n {
            break;
        }
        let (before, after) = (signal[i - 1], signal[end + 1]);
        let kind = if before < v && after < v {
            Some(FeatureKind::Peak)
        } else if before > v && after > v {
            Some(FeatureKind::Trough)
        } else {
            None
        };
        if let Some(kind) = kind {
            let s = if kind == FeatureKind::Peak { 1.0 } else { -1.0 };
            let left = side_base(signal[..i].iter().rev(), s * v, s);
            let right = side_base(signal[end + 1..n].iter(), s * v, s);
            let prominence = s * v - left.max(right);
            if prominence >= min_prominence {
                out.push(Feature {
                    time: times[i],
                    value: v,
                    kind,
                    prominence,
                });
            }
        }
        i = end + 1;
    }
    out
}

/// Lowest (sign-adjusted) value reached before the signal climbs above
/// `level`.
fn side_base<'a>(it: impl Iterator<Item = &'a f64>, level: f64, s: f64) -> f64 {
    let mut lo = f64::INFINITY;
    for x in it {
        let y = s * x;
        if y > level {
            break;
        }
        lo = lo.min(y);
    }
    lo
}

/// Most prominent feature of `kind` with `lo <= time <= hi`.
pub fn strongest_feature(features: &[Feature], kind: FeatureKind, lo: f64, hi: f64) -> Option<Feature> {
    features
        .iter()
        .filter(|f| f.kind == kind && f.time >= lo && f.time <= hi)
        .copied()
        .reduce(|a, b| if b.prominence > a.prominence { b } else { a })
}

/// Echo signal `s₁₂ - s₁ - s₂ + baseline`: the part of a two-kick response
/// not explained by the two single-kick responses.
pub fn echo_difference(two_kick: &[f64], first: &[f64], second: &[f64], baseline: f64) -> Vec<f64> {
    two_kick
        .iter()
        .zip(first)
        .zip(second)
        .map(|((a, b), c)| a - b - c + baseline)
        .collect()
}

/// `max |d|` over the window divided by `max |control - baseline|` over the
/// same window.
pub fn echo_ratio(times: &[f64], difference: &[f64], control: &[f64], baseline: f64, lo: f64, hi: f64) -> f64 {
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for ((t, d), c) in times.iter().zip(difference).zip(control) {
        if *t >= lo && *t <= hi {
            num = num.max(d.abs());
            den = den.max((c - baseline).abs());
        }
    }
    num / den
}

/// Mean over a trajectory column, trapezoid-weighted in time.
pub fn time_average(times: &[f64], values: &[f64]) -> f64 {
    if times.len() < 2 {
        return values.first().copied().unwrap_or(0.0);
    }
    let span = times[times.len() - 1] - times[0];
    let area: f64 = times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum();
    area / span
}

/// Shell-resolved populations `P(j)`.
pub fn shell_populations(state: &QuantumState) -> Vec<f64> {
    let basis = state.basis();
    let pops = state.populations();
    (0..=basis.j_max()).map(|j| pops[basis.shell(j)].iter().sum()).collect()
}

/// Dense density matrix of a state (for small bases).
pub fn density_matrix(state: &QuantumState) -> DMatrix<C> {
    state.to_mixed().rho().clone()
}
