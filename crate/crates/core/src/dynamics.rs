//! Time propagation of pure states, weighted pure-state ensembles and density
//! matrices under `H(t) = H₀ + Σ_i c_i(t) O_i` plus impulsive kicks.
//!
//! Unitary paths hold `H` constant over each step at its midpoint value and
//! apply the exact exponential. Everything is done blockwise over the
//! invariant subspaces shared by `H₀`, the drive channels and the kick
//! operator, and only blocks that carry amplitude are touched. Open systems
//! use RK4 with step doubling on the same blocks.
//!
//! States recorded at an output time include any kick scheduled at exactly
//! that time.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::basis::{BasisSet, RotorState};
use crate::error::{Result, RotorError};
use crate::exec::Execution;
use crate::hamiltonian::{free_hamiltonian, Channel, Coefficients, RotorSpec};
use crate::linalg::{eigh, is_diagonal, spectral_map};
use crate::operator::{BlockStructure, Operator};
use crate::pulses::{kick_schedule, KickGenerator, PulseSpec};
use crate::units::thermal_energy;

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);

/// Below this many touched matrix elements per step, fan-out costs more than
/// it saves.
const PAR_MIN_WORK: usize = 1 << 14;

fn norm_sqr(psi: &[C]) -> f64 {
    psi.iter().map(|z| z.norm_sqr()).sum()
}

fn check_len(basis: &BasisSet, n: usize) -> Result<()> {
    if n == basis.dim() {
        Ok(())
    } else {
        Err(RotorError::InvalidInput(format!(
            "state has length {n}, basis has dimension {}",
            basis.dim()
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    basis: Arc<BasisSet>,
    psi: Vec<C>,
}

impl PureState {
    /// Requires `‖ψ‖ = 1` within `1e-8`.
    pub fn new(basis: Arc<BasisSet>, psi: Vec<C>) -> Result<Self> {
        check_len(&basis, psi.len())?;
        let n = norm_sqr(&psi).sqrt();
        if (n - 1.0).abs() > 1e-8 {
            return Err(RotorError::InvalidInput(format!("state norm is {n}, expected 1")));
        }
        Ok(Self { basis, psi })
    }

    pub fn normalized(basis: Arc<BasisSet>, mut psi: Vec<C>) -> Result<Self> {
        check_len(&basis, psi.len())?;
        let n = norm_sqr(&psi).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(RotorError::InvalidInput("cannot normalise a zero vector".into()));
        }
        psi.iter_mut().for_each(|z| *z /= n);
        Ok(Self { basis, psi })
    }

    pub fn basis_state(basis: Arc<BasisSet>, state: RotorState) -> Result<Self> {
        let i = basis
            .index_of(state)
            .ok_or_else(|| RotorError::QuantumNumbers(format!("{state:?} is not in the basis")))?;
        let mut psi = vec![ZERO; basis.dim()];
        psi[i] = C::new(1.0, 0.0);
        Ok(Self { basis, psi })
    }

    /// Normalised superposition of basis kets.
    pub fn superposition(basis: Arc<BasisSet>, terms: &[(RotorState, C)]) -> Result<Self> {
        let mut psi = vec![ZERO; basis.dim()];
        for (s, c) in terms {
            let i = basis
                .index_of(*s)
                .ok_or_else(|| RotorError::QuantumNumbers(format!("{s:?} is not in the basis")))?;
            psi[i] += c;
        }
        Self::normalized(basis, psi)
    }

    pub fn basis(&self) -> &Arc<BasisSet> {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[C] {
        &self.psi
    }

    pub fn norm(&self) -> f64 {
        norm_sqr(&self.psi).sqrt()
    }

    /// `⟨self|other⟩`.
    pub fn overlap(&self, other: &PureState) -> C {
        self.psi.iter().zip(&other.psi).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.psi.iter().map(|z| z.norm_sqr()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedState {
    basis: Arc<BasisSet>,
    rho: DMatrix<C>,
}

impl MixedState {
    /// Requires a Hermitian matrix with unit trace (within `1e-8`).
    pub fn new(basis: Arc<BasisSet>, rho: DMatrix<C>) -> Result<Self> {
        check_len(&basis, rho.nrows())?;
        check_len(&basis, rho.ncols())?;
        let herm = (&rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > 1e-10 {
            return Err(RotorError::InvalidInput(format!("density matrix not Hermitian ({herm:.2e})")));
        }
        let tr = rho.trace().re;
        if (tr - 1.0).abs() > 1e-8 {
            return Err(RotorError::InvalidInput(format!("density matrix trace is {tr}")));
        }
        Ok(Self { basis, rho })
    }

    pub fn from_pure(state: &PureState) -> Self {
        let v = DVector::from_column_slice(&state.psi);
        Self {
            basis: state.basis.clone(),
            rho: &v * v.adjoint(),
        }
    }

    pub fn basis(&self) -> &Arc<BasisSet> {
        &self.basis
    }

    pub fn rho(&self) -> &DMatrix<C> {
        &self.rho
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        crate::linalg::min_eigenvalue(&self.rho)
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.rho.nrows()).map(|i| self.rho[(i, i)].re).collect()
    }
}

/// Mixed state stored as `Σ_i w_i |ψ_i⟩⟨ψ_i|` with `Σ w_i = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    basis: Arc<BasisSet>,
    weights: Vec<f64>,
    members: Vec<Vec<C>>,
}

impl Ensemble {
    /// Weights must be non-negative and are rescaled to sum to one; members
    /// must be normalised.
    pub fn new(basis: Arc<BasisSet>, members: Vec<(f64, Vec<C>)>) -> Result<Self> {
        let total: f64 = members.iter().map(|(w, _)| *w).sum();
        if members.iter().any(|(w, _)| !(w.is_finite() && *w >= 0.0)) || !(total > 0.0) {
            return Err(RotorError::InvalidInput("ensemble weights must be >= 0 with positive sum".into()));
        }
        let mut weights = Vec::with_capacity(members.len());
        let mut vecs = Vec::with_capacity(members.len());
        for (w, psi) in members {
            check_len(&basis, psi.len())?;
            let n = norm_sqr(&psi).sqrt();
            if (n - 1.0).abs() > 1e-8 {
                return Err(RotorError::InvalidInput(format!("ensemble member norm is {n}")));
            }
            weights.push(w / total);
            vecs.push(psi);
        }
        Ok(Self {
            basis,
            weights,
            members: vecs,
        })
    }

    pub fn basis(&self) -> &Arc<BasisSet> {
        &self.basis
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn members(&self) -> &[Vec<C>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn to_mixed(&self) -> MixedState {
        let n = self.basis.dim();
        let mut rho = DMatrix::zeros(n, n);
        for (w, psi) in self.weights.iter().zip(&self.members) {
            let nz: Vec<usize> = (0..n).filter(|&i| psi[i] != ZERO).collect();
            for &r in &nz {
                for &c in &nz {
                    rho[(r, c)] += psi[r] * psi[c].conj() * *w;
                }
            }
        }
        MixedState {
            basis: self.basis.clone(),
            rho,
        }
    }

    pub fn populations(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.basis.dim()];
        for (w, psi) in self.weights.iter().zip(&self.members) {
            for (acc, z) in p.iter_mut().zip(psi) {
                *acc += w * z.norm_sqr();
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuantumState {
    Pure(PureState),
    Mixed(MixedState),
    Ensemble(Ensemble),
}

impl QuantumState {
    pub fn basis(&self) -> &Arc<BasisSet> {
        match self {
            QuantumState::Pure(s) => &s.basis,
            QuantumState::Mixed(s) => &s.basis,
            QuantumState::Ensemble(s) => &s.basis,
        }
    }

    /// `Tr[ρ O]` or `⟨ψ|O|ψ⟩`.
    pub fn expectation(&self, op: &Operator) -> Result<f64> {
        op.basis().require_same(self.basis())?;
        Ok(match self {
            QuantumState::Pure(s) => op.expectation_pure(&s.psi),
            QuantumState::Mixed(s) => op.expectation_mixed(&s.rho),
            QuantumState::Ensemble(e) => e
                .weights
                .iter()
                .zip(&e.members)
                .map(|(w, psi)| w * op.expectation_pure(psi))
                .sum(),
        })
    }

    pub fn populations(&self) -> Vec<f64> {
        match self {
            QuantumState::Pure(s) => s.populations(),
            QuantumState::Mixed(s) => s.populations(),
            QuantumState::Ensemble(e) => e.populations(),
        }
    }

    /// `|‖ψ‖ - 1|`, `|Tr ρ - 1|`, or the worst member norm error.
    pub fn norm_error(&self) -> f64 {
        match self {
            QuantumState::Pure(s) => (s.norm() - 1.0).abs(),
            QuantumState::Mixed(s) => (s.trace() - 1.0).abs(),
            QuantumState::Ensemble(e) => e
                .members
                .iter()
                .map(|psi| (norm_sqr(psi).sqrt() - 1.0).abs())
                .fold(0.0, f64::max),
        }
    }

    pub fn to_mixed(&self) -> MixedState {
        match self {
            QuantumState::Pure(s) => MixedState::from_pure(s),
            QuantumState::Mixed(s) => s.clone(),
            QuantumState::Ensemble(e) => e.to_mixed(),
        }
    }
}

/// Population in the `shells` highest `j` shells.
pub fn edge_population(basis: &BasisSet, populations: &[f64], shells: u32) -> f64 {
    let start = if shells > basis.j_max() {
        0
    } else {
        basis.shell(basis.j_max() + 1 - shells).start
    };
    populations[start..].iter().sum()
}

fn thermal_members(spec: &RotorSpec, basis: &Arc<BasisSet>, kelvin: f64) -> Result<Vec<(f64, Vec<C>)>> {
    if !(kelvin >= 0.0 && kelvin.is_finite()) {
        return Err(RotorError::InvalidInput(format!("temperature must be >= 0, got {kelvin}")));
    }
    let h0 = free_hamiltonian(spec, basis)?;
    let blocks = BlockStructure::from_operators(basis.dim(), &[&h0]);
    let mut levels: Vec<(f64, f64, u32, Vec<C>)> = Vec::new();
    for idx in blocks.blocks() {
        let j = basis.state_at(idx[0]).j;
        let g = spec.spin_weights.weight(j);
        if g <= 0.0 {
            continue;
        }
        let (vals, vecs) = eigh(&h0.dense_block(idx));
        for (p, e) in vals.iter().enumerate() {
            let mut psi = vec![ZERO; basis.dim()];
            for (q, &i) in idx.iter().enumerate() {
                psi[i] = vecs[(q, p)];
            }
            levels.push((*e, g, j, psi));
        }
    }
    if levels.is_empty() {
        return Err(RotorError::InvalidInput("all spin weights are zero".into()));
    }
    let e_min = levels.iter().map(|l| l.0).fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = if kelvin == 0.0 {
        let tol = 1e-12 * e_min.abs().max(1.0);
        levels.iter().map(|l| if l.0 - e_min <= tol { l.1 } else { 0.0 }).collect()
    } else {
        let kt = thermal_energy(kelvin);
        levels.iter().map(|l| l.1 * (-(l.0 - e_min) / kt).exp()).collect()
    };
    let z: f64 = weights.iter().sum();
    let top: f64 = levels
        .iter()
        .zip(&weights)
        .filter(|(l, _)| l.2 == basis.j_max())
        .map(|(_, w)| w)
        .sum::<f64>()
        / z;
    if top > 1e-6 && basis.j_max() > 0 {
        return Err(RotorError::Truncation {
            population: top,
            shell: basis.j_max(),
            limit: 1e-6,
            time: 0.0,
        });
    }
    Ok(levels
        .into_iter()
        .zip(weights)
        .filter(|(_, w)| *w / z >= 1e-18)
        .map(|(l, w)| (w / z, l.3))
        .collect())
}

/// Canonical state `Σ g_J e^{-E/k_BT} |n⟩⟨n| / Z` over the eigenstates of
/// the free Hamiltonian, as weighted pure states. `T = 0` gives the uniform
/// mixture over the ground level. Members with relative weight below
/// `1e-18` are omitted.
pub fn thermal_ensemble(spec: &RotorSpec, basis: &Arc<BasisSet>, kelvin: f64) -> Result<Ensemble> {
    Ensemble::new(basis.clone(), thermal_members(spec, basis, kelvin)?)
}

/// [`thermal_ensemble`] as a density matrix.
pub fn thermal_state(spec: &RotorSpec, basis: &Arc<BasisSet>, kelvin: f64) -> Result<QuantumState> {
    Ok(QuantumState::Mixed(thermal_ensemble(spec, basis, kelvin)?.to_mixed()))
}

/// Strictly increasing output times, ps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.iter().any(|t| !t.is_finite()) {
            return Err(RotorError::InvalidInput("time grid must be non-empty and finite".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(RotorError::InvalidInput("time grid must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// `intervals + 1` equally spaced points from `t0` to `t1` inclusive.
    pub fn uniform(t0: f64, t1: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return Self::from_times(vec![t0]);
        }
        let h = (t1 - t0) / intervals as f64;
        let mut times: Vec<f64> = (0..intervals).map(|i| t0 + i as f64 * h).collect();
        times.push(t1);
        Self::from_times(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

type Drive = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Clone)]
struct BlockEigen {
    values: Vec<f64>,
    /// `None` when the block is diagonal in the basis.
    vectors: Option<DMatrix<C>>,
    max_abs: f64,
}

/// `H(t) = H₀ + Σ_i c_i(t) O_i` plus kicks `exp(iP cos²θ_{zZ})` at fixed
/// times.
#[derive(Clone)]
pub struct DrivenHamiltonian {
    basis: Arc<BasisSet>,
    h0: Operator,
    channels: Vec<Operator>,
    drive: Drive,
    kicks: Vec<(f64, f64)>,
    blocks: BlockStructure,
    h0_blocks: Vec<DMatrix<C>>,
    h0_eigen: Vec<BlockEigen>,
    channel_blocks: Vec<Vec<Option<DMatrix<C>>>>,
    kick_generator: Option<Arc<KickGenerator>>,
}

impl fmt::Debug for DrivenHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DrivenHamiltonian")
            .field("dim", &self.basis.dim())
            .field("channels", &self.channels.len())
            .field("kicks", &self.kicks.len())
            .field("blocks", &self.blocks.len())
            .finish()
    }
}

impl DrivenHamiltonian {
    pub fn free(h0: Operator) -> Self {
        Self::assemble(h0, Vec::new(), Arc::new(|_| Vec::new()), Vec::new(), &[])
    }

    /// General form: `drive(t)` returns one coefficient per channel.
    pub fn new<F>(h0: Operator, channels: Vec<Operator>, drive: F, kicks: Vec<(f64, f64)>) -> Result<Self>
    where
        F: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    {
        for op in &channels {
            op.basis().require_same(h0.basis())?;
        }
        if kicks.iter().any(|(t, p)| !t.is_finite() || !p.is_finite()) {
            return Err(RotorError::InvalidInput("kick times and strengths must be finite".into()));
        }
        let mut kicks = kicks;
        kicks.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = channels.len();
        let drive: Drive = Arc::new(move |t| {
            let c = drive(t);
            assert_eq!(c.len(), n, "drive returned {} coefficients for {n} channels", c.len());
            c
        });
        Ok(Self::assemble(h0, channels, drive, kicks, &[]))
    }

    /// Free Hamiltonian of `spec` driven by `pulses`.
    pub fn from_pulses(spec: &RotorSpec, basis: &Arc<BasisSet>, pulses: &[PulseSpec]) -> Result<Self> {
        for p in pulses {
            p.validate()?;
        }
        let h0 = free_hamiltonian(spec, basis)?;
        let mut keys: Vec<Channel> = Vec::new();
        for p in pulses {
            for ch in p.channels(spec) {
                if !keys.contains(&ch) {
                    keys.push(ch);
                }
            }
        }
        let channels = keys.iter().map(|ch| ch.build(basis)).collect::<Result<Vec<_>>>()?;
        let spec = spec.clone();
        let pulses = pulses.to_vec();
        let kicks = kick_schedule(&pulses);
        let drive: Drive = Arc::new(move |t| {
            let mut c = Coefficients::default();
            for p in &pulses {
                c.merge(&p.sample(t).coefficients(&spec));
            }
            keys.iter().map(|ch| c.get(*ch)).collect()
        });
        Ok(Self::assemble(h0, channels, drive, kicks, &[]))
    }

    fn assemble(
        h0: Operator,
        channels: Vec<Operator>,
        drive: Drive,
        kicks: Vec<(f64, f64)>,
        extra: &[(usize, usize)],
    ) -> Self {
        let basis = h0.basis().clone();
        let dim = basis.dim();
        let c2 = (!kicks.is_empty())
            .then(|| crate::hamiltonian::cos_product(&basis, crate::hamiltonian::SpaceAxis::Z, crate::hamiltonian::SpaceAxis::Z));
        let mut ops: Vec<&Operator> = vec![&h0];
        ops.extend(channels.iter());
        if let Some(c) = &c2 {
            ops.push(c);
        }
        let couplings = ops
            .iter()
            .flat_map(|op| op.entries().map(|(r, c, _)| (r, c)))
            .chain(extra.iter().copied());
        let blocks = BlockStructure::from_couplings(dim, couplings);
        let h0_blocks: Vec<DMatrix<C>> = blocks.blocks().iter().map(|idx| h0.dense_block(idx)).collect();
        let h0_eigen = h0_blocks
            .iter()
            .map(|m| {
                if is_diagonal(m) {
                    let values: Vec<f64> = (0..m.nrows()).map(|i| m[(i, i)].re).collect();
                    let max_abs = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
                    BlockEigen {
                        values,
                        vectors: None,
                        max_abs,
                    }
                } else {
                    let (values, vecs) = eigh(m);
                    let max_abs = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
                    BlockEigen {
                        values,
                        vectors: Some(vecs),
                        max_abs,
                    }
                }
            })
            .collect();
        let channel_blocks = blocks
            .blocks()
            .iter()
            .map(|idx| {
                channels
                    .iter()
                    .map(|op| {
                        let m = op.dense_block(idx);
                        m.iter().any(|z| *z != ZERO).then_some(m)
                    })
                    .collect()
            })
            .collect();
        let kick_generator = c2.map(|c| Arc::new(KickGenerator::from_operator(&c, &blocks)));
        Self {
            basis,
            h0,
            channels,
            drive,
            kicks,
            blocks,
            h0_blocks,
            h0_eigen,
            channel_blocks,
            kick_generator,
        }
    }

    fn regrouped(&self, extra: &[(usize, usize)]) -> Self {
        Self::assemble(
            self.h0.clone(),
            self.channels.clone(),
            self.drive.clone(),
            self.kicks.clone(),
            extra,
        )
    }

    pub fn basis(&self) -> &Arc<BasisSet> {
        &self.basis
    }

    pub fn h0(&self) -> &Operator {
        &self.h0
    }

    pub fn channels(&self) -> &[Operator] {
        &self.channels
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    pub fn kicks(&self) -> &[(f64, f64)] {
        &self.kicks
    }

    /// `max |E|` of the free Hamiltonian over all blocks.
    pub fn free_spectral_radius(&self) -> f64 {
        self.h0_eigen.iter().map(|e| e.max_abs).fold(0.0, f64::max)
    }

    pub fn coefficients(&self, t: f64) -> Vec<f64> {
        (self.drive)(t)
    }

    /// `H(t)` without kicks.
    pub fn at(&self, t: f64) -> Result<Operator> {
        let c = self.coefficients(t);
        let mut terms: Vec<(f64, &Operator)> = vec![(1.0, &self.h0)];
        terms.extend(c.iter().copied().zip(self.channels.iter()));
        Operator::combine(self.basis.clone(), &terms)
    }

    fn block_hamiltonian(&self, b: usize, coeffs: &[f64]) -> DMatrix<C> {
        let mut h = self.h0_blocks[b].clone();
        for (c, m) in coeffs.iter().zip(&self.channel_blocks[b]) {
            if let (true, Some(m)) = (*c != 0.0, m) {
                h += m * C::new(*c, 0.0);
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PropagationOptions {
    /// Largest internal step, ps.
    pub max_step: f64,
    /// Refuse steps with `dt·max|E| >=` this value.
    pub step_guard: f64,
    /// Abort when the population of the `watchdog_shells` highest `j`
    /// shells exceeds this.
    pub truncation_limit: f64,
    pub watchdog_shells: u32,
    /// Per-step local error bound for the open-system integrator.
    pub lindblad_tolerance: f64,
    /// Abort open-system runs when `ρ` has an eigenvalue below `-tol`.
    pub positivity_tolerance: f64,
    /// Store the state at every n-th output time.
    pub checkpoint_every: Option<usize>,
    pub execution: Execution,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            max_step: 1e-3,
            step_guard: 0.5,
            truncation_limit: 1e-6,
            watchdog_shells: 2,
            lindblad_tolerance: 1e-9,
            positivity_tolerance: 1e-8,
            checkpoint_every: None,
            execution: Execution::default(),
        }
    }
}

impl PropagationOptions {
    pub fn with_step(max_step: f64) -> Self {
        Self {
            max_step,
            ..Self::default()
        }
    }

    pub fn execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn without_watchdog(mut self) -> Self {
        self.watchdog_shells = 0;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.max_step > 0.0 && self.max_step.is_finite()) {
            return Err(RotorError::InvalidInput(format!("max_step must be > 0, got {}", self.max_step)));
        }
        Ok(())
    }
}

/// Named observable recorded at every output time.
#[derive(Debug, Clone)]
pub struct Probe {
    pub name: String,
    pub op: Operator,
}

impl Probe {
    pub fn new(name: impl Into<String>, op: Operator) -> Self {
        Self { name: name.into(), op }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `values[i][k]` is probe `k` at `times[i]`.
    pub values: Vec<Vec<f64>>,
    /// Largest `|‖ψ‖ - 1|` or `|Tr ρ - 1|` over the output times.
    pub max_norm_error: f64,
    pub max_edge_population: f64,
    /// Smallest density-matrix eigenvalue seen (mixed-state runs only).
    pub min_eigenvalue: Option<f64>,
    pub checkpoints: Vec<(f64, QuantumState)>,
    pub final_state: QuantumState,
}

impl Trajectory {
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.values.iter().map(|row| row[k]).collect())
    }
}

enum Event {
    Step { t: f64, h: f64 },
    Kick(f64),
    Record(usize),
}

/// Walk the output grid, splitting intervals at kick times into steps of at
/// most `max_step`.
fn walk(grid: &TimeGrid, kicks: &[(f64, f64)], max_step: f64, mut on: impl FnMut(Event) -> Result<()>) -> Result<()> {
    let times = grid.times();
    let mut k = kicks.partition_point(|&(tk, _)| tk < times[0]);
    while k < kicks.len() && kicks[k].0 == times[0] {
        on(Event::Kick(kicks[k].1))?;
        k += 1;
    }
    on(Event::Record(0))?;
    let mut t = times[0];
    for (i, &target) in times.iter().enumerate().skip(1) {
        loop {
            let kick_due = k < kicks.len() && kicks[k].0 <= target;
            let stop = if kick_due { kicks[k].0 } else { target };
            if stop > t {
                let n = ((stop - t) / max_step - 1e-9).ceil().max(1.0) as usize;
                let h = (stop - t) / n as f64;
                for s in 0..n {
                    on(Event::Step { t: t + s as f64 * h, h })?;
                }
                t = stop;
            }
            if !kick_due {
                break;
            }
            let tk = kicks[k].0;
            while k < kicks.len() && kicks[k].0 == tk {
                on(Event::Kick(kicks[k].1))?;
                k += 1;
            }
        }
        on(Event::Record(i))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum BlockProp {
    Diagonal(Vec<C>),
    Dense(DMatrix<C>),
}

impl BlockProp {
    fn apply(&self, idx: &[usize], psi: &mut [C]) {
        match self {
            BlockProp::Diagonal(ph) => {
                for (p, &i) in idx.iter().enumerate() {
                    psi[i] *= ph[p];
                }
            }
            BlockProp::Dense(u) => {
                let v = DVector::from_iterator(idx.len(), idx.iter().map(|&i| psi[i]));
                let w = u * v;
                for (p, &i) in idx.iter().enumerate() {
                    psi[i] = w[p];
                }
            }
        }
    }

    fn left(&self, m: &mut DMatrix<C>) {
        match self {
            BlockProp::Diagonal(ph) => {
                for (r, z) in ph.iter().enumerate() {
                    m.row_mut(r).scale_mut_complex(*z);
                }
            }
            BlockProp::Dense(u) => *m = u * &*m,
        }
    }

    fn right_adjoint(&self, m: &mut DMatrix<C>) {
        match self {
            BlockProp::Diagonal(ph) => {
                for (c, z) in ph.iter().enumerate() {
                    m.column_mut(c).scale_mut_complex(z.conj());
                }
            }
            BlockProp::Dense(u) => *m = &*m * u.adjoint(),
        }
    }
}

trait ScaleComplex {
    fn scale_mut_complex(&mut self, z: C);
}

impl<R: nalgebra::Dim, Cc: nalgebra::Dim, S: nalgebra::StorageMut<C, R, Cc>> ScaleComplex
    for nalgebra::Matrix<C, R, Cc, S>
{
    fn scale_mut_complex(&mut self, z: C) {
        self.iter_mut().for_each(|x| *x *= z);
    }
}

type Props = Arc<Vec<Option<BlockProp>>>;

/// Per-step block propagators with caching of field-free steps and of
/// repeated coefficient sets. Field-free steps are merged and applied as one
/// exact propagator by `flush`.
struct Stepper<'a> {
    ham: &'a DrivenHamiltonian,
    active: Vec<usize>,
    opts: &'a PropagationOptions,
    pending: Option<(f64, f64)>,
    free_cache: HashMap<u64, Props>,
    last_driven: Option<(Vec<u64>, u64, Props)>,
    kick_cache: HashMap<u64, Props>,
}

impl<'a> Stepper<'a> {
    fn new(ham: &'a DrivenHamiltonian, active: Vec<usize>, opts: &'a PropagationOptions) -> Self {
        Self {
            ham,
            active,
            opts,
            pending: None,
            free_cache: HashMap::new(),
            last_driven: None,
            kick_cache: HashMap::new(),
        }
    }

    fn exec(&self) -> Execution {
        let work: usize = self.active.iter().map(|&b| self.ham.blocks.blocks()[b].len().pow(3)).sum();
        if self.active.len() > 1 && work >= PAR_MIN_WORK {
            self.opts.execution
        } else {
            Execution::Sequential
        }
    }

    fn guard(&self, max_abs: f64, h: f64, t: f64) -> Result<()> {
        let product = max_abs * h;
        if product >= self.opts.step_guard {
            Err(RotorError::StepSize {
                product,
                limit: self.opts.step_guard,
                time: t,
            })
        } else {
            Ok(())
        }
    }

    fn collect(&self, computed: Vec<(usize, BlockProp)>) -> Props {
        let mut out: Vec<Option<BlockProp>> = vec![None; self.ham.blocks.len()];
        for (b, p) in computed {
            out[b] = Some(p);
        }
        Arc::new(out)
    }

    /// Propagator for a driven step, or `None` for a deferred field-free one.
    /// Pending free evolution must be flushed before the result is applied.
    fn step(&mut self, t: f64, h: f64) -> Result<Option<Props>> {
        let coeffs = (self.ham.drive)(t + 0.5 * h);
        if coeffs.iter().all(|&c| c == 0.0) {
            let max_abs = self
                .active
                .iter()
                .map(|&b| self.ham.h0_eigen[b].max_abs)
                .fold(0.0, f64::max);
            self.guard(max_abs, h, t)?;
            let start = self.pending.map_or(t, |(s, _)| s);
            self.pending = Some((start, t + h));
            Ok(None)
        } else {
            self.driven(&coeffs, t, h).map(Some)
        }
    }

    /// Free propagator over the deferred field-free time.
    fn flush(&mut self) -> Option<Props> {
        let (start, end) = self.pending.take()?;
        Some(self.free(end - start))
    }

    fn free(&mut self, h: f64) -> Props {
        if let Some(p) = self.free_cache.get(&h.to_bits()) {
            return p.clone();
        }
        let ham = self.ham;
        let computed = self.exec().map(&self.active, |&b| {
            let e = &ham.h0_eigen[b];
            let prop = match &e.vectors {
                None => BlockProp::Diagonal(e.values.iter().map(|v| C::from_polar(1.0, -v * h)).collect()),
                Some(v) => BlockProp::Dense(spectral_map(&e.values, v, |x| C::from_polar(1.0, -x * h))),
            };
            (b, prop)
        });
        let props = self.collect(computed);
        if self.free_cache.len() > 64 {
            self.free_cache.clear();
        }
        self.free_cache.insert(h.to_bits(), props.clone());
        props
    }

    fn driven(&mut self, coeffs: &[f64], t: f64, h: f64) -> Result<Props> {
        let key: Vec<u64> = coeffs.iter().map(|c| c.to_bits()).collect();
        if let Some((k, hb, p)) = &self.last_driven {
            if *k == key && *hb == h.to_bits() {
                return Ok(p.clone());
            }
        }
        let ham = self.ham;
        let computed = self.exec().map(&self.active, |&b| {
            let m = ham.block_hamiltonian(b, coeffs);
            if is_diagonal(&m) {
                let d: Vec<f64> = (0..m.nrows()).map(|i| m[(i, i)].re).collect();
                let max_abs = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
                (b, BlockProp::Diagonal(d.iter().map(|v| C::from_polar(1.0, -v * h)).collect()), max_abs)
            } else {
                let (vals, vecs) = eigh(&m);
                let max_abs = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
                (
                    b,
                    BlockProp::Dense(spectral_map(&vals, &vecs, |x| C::from_polar(1.0, -x * h))),
                    max_abs,
                )
            }
        });
        let max_abs = computed.iter().map(|c| c.2).fold(0.0, f64::max);
        self.guard(max_abs, h, t)?;
        let props = self.collect(computed.into_iter().map(|(b, p, _)| (b, p)).collect());
        self.last_driven = Some((key, h.to_bits(), props.clone()));
        Ok(props)
    }

    fn kick(&mut self, p: f64) -> Props {
        if let Some(k) = self.kick_cache.get(&p.to_bits()) {
            return k.clone();
        }
        let gen = self
            .ham
            .kick_generator
            .as_ref()
            .expect("kick scheduled without kick generator")
            .clone();
        let computed = self
            .exec()
            .map(&self.active, |&b| (b, BlockProp::Dense(gen.block_unitary(p, b))));
        let props = self.collect(computed);
        self.kick_cache.insert(p.to_bits(), props.clone());
        props
    }
}

struct Member {
    weight: f64,
    psi: Vec<C>,
    blocks: Vec<usize>,
    /// Basis indices covered by `blocks`, ascending.
    support: Vec<usize>,
}

impl Member {
    fn new(ham: &DrivenHamiltonian, weight: f64, psi: Vec<C>) -> Self {
        let blocks = ham.blocks.support(&psi);
        let mut support: Vec<usize> = blocks.iter().flat_map(|&b| ham.blocks.blocks()[b].iter().copied()).collect();
        support.sort_unstable();
        Self {
            weight,
            psi,
            blocks,
            support,
        }
    }

    fn expectation(&self, op: &Operator) -> f64 {
        let mut acc = 0.0;
        for &r in &self.support {
            let z = self.psi[r];
            if z != ZERO {
                let row: C = op.row(r).map(|(c, v)| v * self.psi[c]).sum();
                acc += (z.conj() * row).re;
            }
        }
        acc
    }

    fn norm_sqr_from(&self, start: usize) -> f64 {
        let k = self.support.partition_point(|&i| i < start);
        self.support[k..].iter().map(|&i| self.psi[i].norm_sqr()).sum()
    }
}

fn tail_start(basis: &BasisSet, shells: u32) -> usize {
    if shells == 0 {
        basis.dim()
    } else if shells > basis.j_max() {
        0
    } else {
        basis.shell(basis.j_max() + 1 - shells).start
    }
}

fn watchdog(opts: &PropagationOptions, basis: &BasisSet, edge: f64, t: f64) -> Result<()> {
    if opts.watchdog_shells > 0 && edge > opts.truncation_limit {
        return Err(RotorError::Truncation {
            population: edge,
            shell: (basis.j_max() + 1).saturating_sub(opts.watchdog_shells),
            limit: opts.truncation_limit,
            time: t,
        });
    }
    Ok(())
}

fn run_vectors(
    ham: &DrivenHamiltonian,
    weights: Vec<f64>,
    vectors: Vec<Vec<C>>,
    grid: &TimeGrid,
    probes: &[Probe],
    opts: &PropagationOptions,
    pure: bool,
) -> Result<Trajectory> {
    opts.validate()?;
    for p in probes {
        p.op.basis().require_same(&ham.basis)?;
    }
    let basis = ham.basis.clone();
    let mut members: Vec<Member> = weights
        .into_iter()
        .zip(vectors)
        .map(|(weight, psi)| Member::new(ham, weight, psi))
        .collect();
    let mut active: Vec<usize> = members.iter().flat_map(|m| m.blocks.iter().copied()).collect();
    active.sort_unstable();
    active.dedup();
    let member_work: usize = members
        .iter()
        .map(|m| m.blocks.iter().map(|&b| ham.blocks.blocks()[b].len().pow(2)).sum::<usize>())
        .sum();
    let member_exec = if members.len() > 1 && member_work >= PAR_MIN_WORK {
        opts.execution
    } else {
        Execution::Sequential
    };
    let tail = tail_start(&basis, opts.watchdog_shells);
    let snapshot = |members: &[Member]| {
        if pure {
            QuantumState::Pure(PureState {
                basis: basis.clone(),
                psi: members[0].psi.clone(),
            })
        } else {
            QuantumState::Ensemble(Ensemble {
                basis: basis.clone(),
                weights: members.iter().map(|m| m.weight).collect(),
                members: members.iter().map(|m| m.psi.clone()).collect(),
            })
        }
    };

    let mut stepper = Stepper::new(ham, active, opts);
    let mut traj = Trajectory {
        times: Vec::with_capacity(grid.len()),
        names: probes.iter().map(|p| p.name.clone()).collect(),
        values: Vec::with_capacity(grid.len()),
        max_norm_error: 0.0,
        max_edge_population: 0.0,
        min_eigenvalue: None,
        checkpoints: Vec::new(),
        final_state: snapshot(&members),
    };
    let apply = |members: &mut [Member], props: &Props| {
        member_exec.map_mut(members, |m| {
            for &b in &m.blocks {
                if let Some(p) = &props[b] {
                    p.apply(&ham.blocks.blocks()[b], &mut m.psi);
                }
            }
        });
    };
    walk(grid, &ham.kicks, opts.max_step, |ev| {
        match ev {
            Event::Step { t, h } => {
                if let Some(props) = stepper.step(t, h)? {
                    if let Some(free) = stepper.flush() {
                        apply(&mut members, &free);
                    }
                    apply(&mut members, &props);
                }
            }
            Event::Kick(p) => {
                if let Some(free) = stepper.flush() {
                    apply(&mut members, &free);
                }
                let props = stepper.kick(p);
                apply(&mut members, &props);
            }
            Event::Record(i) => {
                if let Some(free) = stepper.flush() {
                    apply(&mut members, &free);
                }
                let t = grid.times()[i];
                let per: Vec<(Vec<f64>, f64, f64)> = member_exec.map(&members, |m| {
                    let vals = probes.iter().map(|p| m.expectation(&p.op)).collect();
                    let n2 = m.norm_sqr_from(0);
                    let edge = m.norm_sqr_from(tail);
                    (vals, n2, edge)
                });
                let mut vals = vec![0.0; probes.len()];
                let mut edge = 0.0;
                let mut norm_err: f64 = 0.0;
                for (m, (v, n2, e)) in members.iter().zip(&per) {
                    for (acc, x) in vals.iter_mut().zip(v) {
                        *acc += m.weight * x;
                    }
                    edge += m.weight * e;
                    norm_err = norm_err.max((n2.sqrt() - 1.0).abs());
                }
                traj.times.push(t);
                traj.values.push(vals);
                traj.max_norm_error = traj.max_norm_error.max(norm_err);
                traj.max_edge_population = traj.max_edge_population.max(edge);
                if let Some(n) = opts.checkpoint_every {
                    if n > 0 && i % n == 0 {
                        traj.checkpoints.push((t, snapshot(&members)));
                    }
                }
                watchdog(opts, &basis, edge, t)?;
            }
        }
        Ok(())
    })?;
    traj.final_state = snapshot(&members);
    Ok(traj)
}

/// Propagate a pure state. Requires `dt·max|E| < step_guard` on every step.
pub fn propagate_schrodinger(
    state: &PureState,
    ham: &DrivenHamiltonian,
    grid: &TimeGrid,
    probes: &[Probe],
    opts: &PropagationOptions,
) -> Result<Trajectory> {
    state.basis.require_same(&ham.basis)?;
    run_vectors(ham, vec![1.0], vec![state.psi.clone()], grid, probes, opts, true)
}

/// Propagate each member of an ensemble; observables are weight-summed in
/// member order.
pub fn propagate_ensemble(
    state: &Ensemble,
    ham: &DrivenHamiltonian,
    grid: &TimeGrid,
    probes: &[Probe],
    opts: &PropagationOptions,
) -> Result<Trajectory> {
    state.basis.require_same(&ham.basis)?;
    run_vectors(
        ham,
        state.weights.clone(),
        state.members.clone(),
        grid,
        probes,
        opts,
        false,
    )
}

/// Density matrix stored as the nonzero `(block a, block b)` sub-matrices.
struct PairBlocks {
    pairs: Vec<(usize, usize)>,
    mats: Vec<DMatrix<C>>,
    lookup: HashMap<(usize, usize), usize>,
    pos: Vec<usize>,
}

impl PairBlocks {
    fn from_dense(blocks: &BlockStructure, rho: &DMatrix<C>) -> Self {
        let mut pos = vec![0; rho.nrows()];
        for idx in blocks.blocks() {
            for (p, &i) in idx.iter().enumerate() {
                pos[i] = p;
            }
        }
        let mut pairs = Vec::new();
        let mut mats = Vec::new();
        for (a, ia) in blocks.blocks().iter().enumerate() {
            for (b, ib) in blocks.blocks().iter().enumerate() {
                let m = DMatrix::from_fn(ia.len(), ib.len(), |r, c| rho[(ia[r], ib[c])]);
                if m.iter().any(|z| *z != ZERO) {
                    pairs.push((a, b));
                    mats.push(m);
                }
            }
        }
        let lookup = pairs.iter().enumerate().map(|(k, p)| (*p, k)).collect();
        Self {
            pairs,
            mats,
            lookup,
            pos,
        }
    }

    fn to_dense(&self, blocks: &BlockStructure, dim: usize) -> DMatrix<C> {
        let mut rho = DMatrix::zeros(dim, dim);
        for ((a, b), m) in self.pairs.iter().zip(&self.mats) {
            let (ia, ib) = (&blocks.blocks()[*a], &blocks.blocks()[*b]);
            for (r, &i) in ia.iter().enumerate() {
                for (c, &j) in ib.iter().enumerate() {
                    rho[(i, j)] = m[(r, c)];
                }
            }
        }
        rho
    }

    fn active_blocks(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn element(&self, blocks: &BlockStructure, r: usize, c: usize) -> C {
        match self.lookup.get(&(blocks.block_of(r), blocks.block_of(c))) {
            Some(&k) => self.mats[k][(self.pos[r], self.pos[c])],
            None => ZERO,
        }
    }

    fn expectation(&self, blocks: &BlockStructure, op: &Operator) -> f64 {
        op.entries().map(|(r, c, v)| v * self.element(blocks, c, r)).sum::<C>().re
    }

    fn diagonal(&self, blocks: &BlockStructure, dim: usize) -> Vec<f64> {
        (0..dim).map(|i| self.element(blocks, i, i).re).collect()
    }

    fn min_eigenvalue(&self, blocks: &BlockStructure) -> f64 {
        if self.pairs.iter().all(|(a, b)| a == b) {
            return self
                .mats
                .iter()
                .map(crate::linalg::min_eigenvalue)
                .fold(f64::INFINITY, f64::min);
        }
        let idx: Vec<usize> = self
            .active_blocks()
            .into_iter()
            .flat_map(|b| blocks.blocks()[b].iter().copied())
            .collect();
        let m = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.element(blocks, idx[r], idx[c]));
        crate::linalg::min_eigenvalue(&m)
    }
}

struct MixedRecorder<'a> {
    ham: &'a DrivenHamiltonian,
    probes: &'a [Probe],
    opts: &'a PropagationOptions,
    tail: usize,
    traj: Trajectory,
    check_positivity: bool,
}

impl MixedRecorder<'_> {
    fn record(&mut self, rho: &PairBlocks, i: usize, t: f64) -> Result<()> {
        let blocks = &self.ham.blocks;
        let dim = self.ham.basis.dim();
        let vals = self.probes.iter().map(|p| rho.expectation(blocks, &p.op)).collect();
        let diag = rho.diagonal(blocks, dim);
        let trace: f64 = diag.iter().sum();
        let edge: f64 = diag[self.tail..].iter().sum();
        let min_eig = rho.min_eigenvalue(blocks);
        let traj = &mut self.traj;
        traj.times.push(t);
        traj.values.push(vals);
        traj.max_norm_error = traj.max_norm_error.max((trace - 1.0).abs());
        traj.max_edge_population = traj.max_edge_population.max(edge);
        traj.min_eigenvalue = Some(traj.min_eigenvalue.map_or(min_eig, |m| m.min(min_eig)));
        if let Some(n) = self.opts.checkpoint_every {
            if n > 0 && i % n == 0 {
                let state = MixedState {
                    basis: self.ham.basis.clone(),
                    rho: rho.to_dense(blocks, dim),
                };
                traj.checkpoints.push((t, QuantumState::Mixed(state)));
            }
        }
        if self.check_positivity && min_eig < -self.opts.positivity_tolerance {
            return Err(RotorError::Positivity {
                min_eigenvalue: min_eig,
                time: t,
            });
        }
        watchdog(self.opts, &self.ham.basis, edge, t)
    }

    fn finish(mut self, rho: &PairBlocks) -> Trajectory {
        let dim = self.ham.basis.dim();
        self.traj.final_state = QuantumState::Mixed(MixedState {
            basis: self.ham.basis.clone(),
            rho: rho.to_dense(&self.ham.blocks, dim),
        });
        self.traj
    }
}

fn recorder<'a>(
    ham: &'a DrivenHamiltonian,
    state: &MixedState,
    grid: &TimeGrid,
    probes: &'a [Probe],
    opts: &'a PropagationOptions,
    check_positivity: bool,
) -> MixedRecorder<'a> {
    MixedRecorder {
        ham,
        probes,
        opts,
        tail: tail_start(&ham.basis, opts.watchdog_shells),
        traj: Trajectory {
            times: Vec::with_capacity(grid.len()),
            names: probes.iter().map(|p| p.name.clone()).collect(),
            values: Vec::with_capacity(grid.len()),
            max_norm_error: 0.0,
            max_edge_population: 0.0,
            min_eigenvalue: None,
            checkpoints: Vec::new(),
            final_state: QuantumState::Mixed(state.clone()),
        },
        check_positivity,
    }
}

/// Liouville-von Neumann propagation `ρ → U ρ U†` with the same step
/// propagators as [`propagate_schrodinger`].
pub fn propagate_lvn(
    state: &MixedState,
    ham: &DrivenHamiltonian,
    grid: &TimeGrid,
    probes: &[Probe],
    opts: &PropagationOptions,
) -> Result<Trajectory> {
    opts.validate()?;
    state.basis.require_same(&ham.basis)?;
    for p in probes {
        p.op.basis().require_same(&ham.basis)?;
    }
    let mut rho = PairBlocks::from_dense(&ham.blocks, &state.rho);
    let mut stepper = Stepper::new(ham, rho.active_blocks(), opts);
    let work: usize = rho.mats.iter().map(|m| m.len()).sum();
    let exec = if rho.pairs.len() > 1 && work >= PAR_MIN_WORK {
        opts.execution
    } else {
        Execution::Sequential
    };
    let mut rec = recorder(ham, state, grid, probes, opts, false);
    let pairs = rho.pairs.clone();
    let apply = |rho: &mut PairBlocks, props: &Props| {
        let mut items: Vec<(usize, &mut DMatrix<C>)> = rho.mats.iter_mut().enumerate().collect();
        exec.map_mut(&mut items, |(k, m)| {
            let (a, b) = pairs[*k];
            if let Some(p) = &props[a] {
                p.left(m);
            }
            if let Some(p) = &props[b] {
                p.right_adjoint(m);
            }
        });
    };
    walk(grid, &ham.kicks, opts.max_step, |ev| {
        match ev {
            Event::Step { t, h } => {
                if let Some(props) = stepper.step(t, h)? {
                    if let Some(free) = stepper.flush() {
                        apply(&mut rho, &free);
                    }
                    apply(&mut rho, &props);
                }
            }
            Event::Kick(p) => {
                if let Some(free) = stepper.flush() {
                    apply(&mut rho, &free);
                }
                let props = stepper.kick(p);
                apply(&mut rho, &props);
            }
            Event::Record(i) => {
                if let Some(free) = stepper.flush() {
                    apply(&mut rho, &free);
                }
                rec.record(&rho, i, grid.times()[i])?
            }
        }
        Ok(())
    })?;
    Ok(rec.finish(&rho))
}

/// General (not necessarily Hermitian) collapse operator `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseOperator {
    basis: Arc<BasisSet>,
    label: String,
    entries: Vec<(usize, usize, C)>,
}

impl CollapseOperator {
    pub fn new(basis: Arc<BasisSet>, label: impl Into<String>, entries: Vec<(usize, usize, C)>) -> Result<Self> {
        let n = basis.dim();
        if entries.iter().any(|&(r, c, _)| r >= n || c >= n) {
            return Err(RotorError::InvalidInput("collapse operator index out of range".into()));
        }
        Ok(Self {
            basis,
            label: label.into(),
            entries,
        })
    }

    pub fn from_operator(label: impl Into<String>, op: &Operator, scale: f64) -> Self {
        Self {
            basis: op.basis().clone(),
            label: label.into(),
            entries: op.entries().map(|(r, c, v)| (r, c, v * scale)).collect(),
        }
    }

    pub fn basis(&self) -> &Arc<BasisSet> {
        &self.basis
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn entries(&self) -> &[(usize, usize, C)] {
        &self.entries
    }
}

/// Pure dephasing in the energy eigenbasis, `L = √γ H₀ / E_ref` with
/// `E_ref = max |E|`. Coherences between levels `a`, `b` decay at rate
/// `γ (E_a - E_b)² / (2 E_ref²)`; populations are untouched.
pub fn energy_dephasing(h0: &Operator, gamma: f64) -> Result<CollapseOperator> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(RotorError::InvalidInput(format!("dephasing rate must be >= 0, got {gamma}")));
    }
    let blocks = BlockStructure::from_operators(h0.dim(), &[h0]);
    let e_ref = blocks
        .blocks()
        .iter()
        .flat_map(|idx| eigh(&h0.dense_block(idx)).0)
        .map(f64::abs)
        .fold(0.0, f64::max);
    if e_ref == 0.0 {
        return Err(RotorError::InvalidInput("dephasing needs a non-zero Hamiltonian".into()));
    }
    Ok(CollapseOperator::from_operator("energy dephasing", h0, gamma.sqrt() / e_ref))
}

/// Model relaxation toward the thermal state: jumps `|j,k,m⟩ → |j-2,k,m⟩`
/// at rate `γ` and the reverse at `γ e^{-ΔE/k_BT}`, which satisfy detailed
/// balance and keep `k`, `m` and the parity of `j`. Requires a diagonal free
/// Hamiltonian (linear or symmetric tops).
pub fn thermalizing_decay(
    spec: &RotorSpec,
    basis: &Arc<BasisSet>,
    gamma: f64,
    kelvin: f64,
) -> Result<Vec<CollapseOperator>> {
    if !(gamma >= 0.0 && gamma.is_finite()) || !(kelvin >= 0.0 && kelvin.is_finite()) {
        return Err(RotorError::InvalidInput("rate and temperature must be >= 0".into()));
    }
    let h0 = free_hamiltonian(spec, basis)?;
    if !h0.is_diagonal() {
        return Err(RotorError::UnsupportedTop(
            "thermalizing decay needs a diagonal free Hamiltonian".into(),
        ));
    }
    let e = h0.diagonal();
    let mut out = Vec::new();
    for (i, s) in basis.states().iter().enumerate() {
        if s.j < 2 {
            continue;
        }
        let Some(f) = basis.index_of(RotorState::new(s.j - 2, s.k, s.m)) else {
            continue;
        };
        let down = gamma.sqrt();
        out.push(CollapseOperator::new(
            basis.clone(),
            format!("decay {i}->{f}"),
            vec![(f, i, C::new(down, 0.0))],
        )?);
        if kelvin > 0.0 {
            let up = (gamma * (-(e[i] - e[f]) / thermal_energy(kelvin)).exp()).sqrt();
            if up > 0.0 {
                out.push(CollapseOperator::new(
                    basis.clone(),
                    format!("excite {f}->{i}"),
                    vec![(i, f, C::new(up, 0.0))],
                )?);
            }
        }
    }
    Ok(out)
}

struct LindbladBlocks {
    /// Per block: collapse-operator index and its dense restriction.
    jumps: Vec<Vec<(usize, DMatrix<C>)>>,
    /// Per block: `Σ_k L_k† L_k`.
    decay: Vec<DMatrix<C>>,
}

impl LindbladBlocks {
    fn new(blocks: &BlockStructure, pos: &[usize], collapse: &[CollapseOperator]) -> Self {
        let sizes: Vec<usize> = blocks.blocks().iter().map(|b| b.len()).collect();
        let mut jumps: Vec<Vec<(usize, DMatrix<C>)>> = vec![Vec::new(); sizes.len()];
        for (k, l) in collapse.iter().enumerate() {
            let mut per: HashMap<usize, DMatrix<C>> = HashMap::new();
            for &(r, c, v) in &l.entries {
                let b = blocks.block_of(r);
                debug_assert_eq!(b, blocks.block_of(c));
                let m = per.entry(b).or_insert_with(|| DMatrix::zeros(sizes[b], sizes[b]));
                m[(pos[r], pos[c])] += v;
            }
            let mut keys: Vec<usize> = per.keys().copied().collect();
            keys.sort_unstable();
            for b in keys {
                jumps[b].push((k, per.remove(&b).unwrap()));
            }
        }
        let decay = jumps
            .iter()
            .zip(&sizes)
            .map(|(js, &n)| {
                let mut g = DMatrix::zeros(n, n);
                for (_, l) in js {
                    g += l.adjoint() * l;
                }
                g
            })
            .collect();
        Self { jumps, decay }
    }
}

/// Open-system propagation
/// `dρ/dt = -i[H,ρ] + Σ_k (L_k ρ L_k† - ½{L_k†L_k, ρ})` by RK4 with step
/// doubling: a step is accepted when full and half-step results differ by at
/// most `lindblad_tolerance`, otherwise it is halved.
pub fn propagate_lindblad(
    state: &MixedState,
    ham: &DrivenHamiltonian,
    collapse: &[CollapseOperator],
    grid: &TimeGrid,
    probes: &[Probe],
    opts: &PropagationOptions,
) -> Result<Trajectory> {
    opts.validate()?;
    state.basis.require_same(&ham.basis)?;
    for l in collapse {
        l.basis.require_same(&ham.basis)?;
    }
    for p in probes {
        p.op.basis().require_same(&ham.basis)?;
    }
    let split = collapse
        .iter()
        .flat_map(|l| l.entries.iter())
        .any(|&(r, c, _)| ham.blocks.block_of(r) != ham.blocks.block_of(c));
    let regrouped;
    let ham = if split {
        let extra: Vec<(usize, usize)> = collapse
            .iter()
            .flat_map(|l| l.entries.iter().map(|&(r, c, _)| (r, c)))
            .collect();
        regrouped = ham.regrouped(&extra);
        &regrouped
    } else {
        ham
    };
    let mut rho = PairBlocks::from_dense(&ham.blocks, &state.rho);
    let lb = LindbladBlocks::new(&ham.blocks, &rho.pos, collapse);
    let active = rho.active_blocks();
    let pairs = rho.pairs.clone();
    let work: usize = rho.mats.iter().map(|m| m.len()).sum();
    let exec = if pairs.len() > 1 && work >= PAR_MIN_WORK {
        opts.execution
    } else {
        Execution::Sequential
    };
    let nblocks = ham.blocks.len();

    let rhs = |t: f64, y: &[DMatrix<C>]| -> Vec<DMatrix<C>> {
        let coeffs = (ham.drive)(t);
        let mut hs: Vec<Option<DMatrix<C>>> = vec![None; nblocks];
        for &b in &active {
            hs[b] = Some(ham.block_hamiltonian(b, &coeffs));
        }
        exec.map_range(y.len(), |k| {
            let (a, b) = pairs[k];
            let m = &y[k];
            let (ha, hb) = (hs[a].as_ref().unwrap(), hs[b].as_ref().unwrap());
            let mut d = (ha * m - m * hb) * C::new(0.0, -1.0);
            for (ka, la) in &lb.jumps[a] {
                if let Some((_, lbm)) = lb.jumps[b].iter().find(|(kb, _)| kb == ka) {
                    d += la * m * lbm.adjoint();
                }
            }
            d -= (&lb.decay[a] * m + m * &lb.decay[b]) * C::new(0.5, 0.0);
            d
        })
    };
    let axpy = |y: &[DMatrix<C>], k: &[DMatrix<C>], s: f64| -> Vec<DMatrix<C>> {
        y.iter().zip(k).map(|(a, b)| a + b * C::new(s, 0.0)).collect()
    };
    let rk4 = |t: f64, h: f64, y: &[DMatrix<C>]| -> Vec<DMatrix<C>> {
        let k1 = rhs(t, y);
        let k2 = rhs(t + 0.5 * h, &axpy(y, &k1, 0.5 * h));
        let k3 = rhs(t + 0.5 * h, &axpy(y, &k2, 0.5 * h));
        let k4 = rhs(t + h, &axpy(y, &k3, h));
        y.iter()
            .enumerate()
            .map(|(i, m)| m + (&k1[i] + (&k2[i] + &k3[i]) * C::new(2.0, 0.0) + &k4[i]) * C::new(h / 6.0, 0.0))
            .collect()
    };

    let mut rec = recorder(ham, state, grid, probes, opts, true);
    let mut h_try = opts.max_step;
    let mut stepper = Stepper::new(ham, active.clone(), opts);
    walk(grid, &ham.kicks, opts.max_step, |ev| {
        match ev {
            Event::Step { t, h } => {
                let end = t + h;
                let mut now = t;
                while now < end {
                    let step = h_try.min(end - now);
                    let full = rk4(now, step, &rho.mats);
                    let half = rk4(now, 0.5 * step, &rho.mats);
                    let half = rk4(now + 0.5 * step, 0.5 * step, &half);
                    let err = full
                        .iter()
                        .zip(&half)
                        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()))
                        .fold(0.0, f64::max);
                    if err > opts.lindblad_tolerance {
                        h_try = 0.5 * step;
                        if h_try < 1e-14 * end.abs().max(1.0) {
                            return Err(RotorError::Numerical(format!(
                                "open-system step underflow at t = {now:.6} ps"
                            )));
                        }
                        continue;
                    }
                    rho.mats = half;
                    now = if step == end - now { end } else { now + step };
                    if err < opts.lindblad_tolerance / 32.0 {
                        h_try = (2.0 * step).min(opts.max_step);
                    }
                }
            }
            Event::Kick(p) => {
                let props = stepper.kick(p);
                for (k, m) in rho.mats.iter_mut().enumerate() {
                    let (a, b) = pairs[k];
                    if let Some(u) = &props[a] {
                        u.left(m);
                    }
                    if let Some(u) = &props[b] {
                        u.right_adjoint(m);
                    }
                }
            }
            Event::Record(i) => rec.record(&rho, i, grid.times()[i])?,
        }
        Ok(())
    })?;
    Ok(rec.finish(&rho))
}

/// Dispatch on the state representation: pure states and ensembles use
/// vector propagation, density matrices the Liouville-von Neumann path.
pub fn propagate(
    state: &QuantumState,
    ham: &DrivenHamiltonian,
    grid: &TimeGrid,
    probes: &[Probe],
    opts: &PropagationOptions,
) -> Result<Trajectory> {
    match state {
        QuantumState::Pure(s) => propagate_schrodinger(s, ham, grid, probes, opts),
        QuantumState::Ensemble(e) => propagate_ensemble(e, ham, grid, probes, opts),
        QuantumState::Mixed(m) => propagate_lvn(m, ham, grid, probes, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::TopClass;
    use crate::hamiltonian::{averaged_interaction, cos_product, direction_cosine, SpaceAxis};

    fn lin(j_max: u32) -> Arc<BasisSet> {
        Arc::new(BasisSet::new(TopClass::Linear, j_max))
    }

    fn ket(b: &Arc<BasisSet>, j: u32, m: i32) -> PureState {
        PureState::basis_state(b.clone(), RotorState::new(j, 0, m)).unwrap()
    }

    #[test]
    fn diagonal_hamiltonian_phase() {
        let b = lin(3);
        let spec = RotorSpec::linear(1.3);
        let ham = DrivenHamiltonian::free(free_hamiltonian(&spec, &b).unwrap());
        let grid = TimeGrid::uniform(0.0, 0.5, 5).unwrap();
        let traj = propagate_schrodinger(&ket(&b, 1, 0), &ham, &grid, &[], &PropagationOptions::with_step(0.01)).unwrap();
        let QuantumState::Pure(s) = &traj.final_state else { panic!() };
        let i = b.index_of(RotorState::new(1, 0, 0)).unwrap();
        let want = C::from_polar(1.0, -2.0 * 1.3 * 0.5);
        assert!((s.amplitudes()[i] - want).norm() < 1e-13);
        assert!(traj.max_norm_error < 1e-14);
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let b = lin(4);
        let ham = DrivenHamiltonian::free(Operator::zero(b.clone()));
        let psi = PureState::superposition(
            b.clone(),
            &[(RotorState::new(0, 0, 0), C::new(1.0, 0.0)), (RotorState::new(3, 0, -2), C::new(0.0, 2.0))],
        )
        .unwrap();
        let grid = TimeGrid::uniform(0.0, 10.0, 3).unwrap();
        let traj = propagate_schrodinger(&psi, &ham, &grid, &[], &PropagationOptions::with_step(1.0).without_watchdog()).unwrap();
        assert_eq!(traj.final_state, QuantumState::Pure(psi));
    }

    #[test]
    fn step_guard_refuses() {
        let b = lin(10);
        let ham = DrivenHamiltonian::free(free_hamiltonian(&RotorSpec::linear(1.0), &b).unwrap());
        let grid = TimeGrid::uniform(0.0, 1.0, 1).unwrap();
        let psi = ket(&b, 10, 0);
        let err = propagate_schrodinger(&psi, &ham, &grid, &[], &PropagationOptions::with_step(0.01).without_watchdog())
            .unwrap_err();
        assert!(matches!(err, RotorError::StepSize { .. }), "{err}");
        assert!(err.is_numerical());
    }

    #[test]
    fn watchdog_trips_on_edge_population() {
        let b = lin(6);
        let ham = DrivenHamiltonian::free(free_hamiltonian(&RotorSpec::linear(1.0), &b).unwrap());
        let grid = TimeGrid::uniform(0.0, 0.01, 1).unwrap();
        let err = propagate_schrodinger(&ket(&b, 5, 0), &ham, &grid, &[], &PropagationOptions::with_step(0.01)).unwrap_err();
        assert!(matches!(err, RotorError::Truncation { shell: 5, .. }), "{err}");
    }

    #[test]
    fn walk_splits_at_kicks() {
        let grid = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        let mut log = Vec::new();
        walk(&grid, &[(0.0, 1.0), (0.3, 2.0), (0.5, 3.0), (2.0, 9.0)], 0.2, |ev| {
            log.push(match ev {
                Event::Step { t, h } => format!("s{:.2}+{:.2}", t, h),
                Event::Kick(p) => format!("k{p}"),
                Event::Record(i) => format!("r{i}"),
            });
            Ok(())
        })
        .unwrap();
        assert_eq!(
            log.join(" "),
            "k1 r0 s0.00+0.15 s0.15+0.15 k2 s0.30+0.20 k3 r1 s0.50+0.17 s0.67+0.17 s0.83+0.17 r2"
        );
    }

    #[test]
    fn lvn_matches_schrodinger_for_pure_state() {
        let b = lin(6);
        let spec = RotorSpec::linear(1.0).with_polarizability(2.0, 1.0);
        let pulse = PulseSpec::GaussianEnvelope {
            center: 0.3,
            fwhm: 0.1,
            peak: [0.0, 2.0, 3.0],
            phases: [0.0, 0.4, 0.0],
            mode: crate::pulses::FieldMode::Averaged,
            carrier: 0.0,
        };
        let ham = DrivenHamiltonian::from_pulses(&spec, &b, &[pulse]).unwrap();
        let psi = ket(&b, 0, 0);
        let grid = TimeGrid::uniform(0.0, 0.8, 8).unwrap();
        let probes = vec![Probe::new("c2z", cos_product(&b, SpaceAxis::Z, SpaceAxis::Z))];
        let opts = PropagationOptions::with_step(0.002);
        let a = propagate_schrodinger(&psi, &ham, &grid, &probes, &opts).unwrap();
        let m = propagate_lvn(&MixedState::from_pure(&psi), &ham, &grid, &probes, &opts).unwrap();
        for (x, y) in a.values.iter().zip(&m.values) {
            assert!((x[0] - y[0]).abs() < 1e-10);
        }
        assert!(m.max_norm_error < 1e-10);
        assert!(m.min_eigenvalue.unwrap() > -1e-10);
    }

    #[test]
    fn thermal_state_is_stationary_and_isotropic() {
        let b = lin(14);
        let spec = RotorSpec::linear(1.0).with_spin_weights(6.0, 3.0);
        let state = thermal_state(&spec, &b, 5.0).unwrap();
        let QuantumState::Mixed(m) = &state else { panic!() };
        assert!((m.trace() - 1.0).abs() < 1e-14);
        for k in SpaceAxis::ALL {
            let v = state.expectation(&cos_product(&b, k, k)).unwrap();
            assert!((v - 1.0 / 3.0).abs() < 1e-12, "{k:?} {v}");
        }
        let ham = DrivenHamiltonian::free(free_hamiltonian(&spec, &b).unwrap());
        let grid = TimeGrid::uniform(0.0, 0.3, 3).unwrap();
        let traj = propagate_lvn(m, &ham, &grid, &[], &PropagationOptions::with_step(0.003)).unwrap();
        let QuantumState::Mixed(end) = &traj.final_state else { panic!() };
        let diff = (end.rho() - m.rho()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-14);
    }

    #[test]
    fn thermal_zero_temperature_and_truncation() {
        let b = lin(4);
        let spec = RotorSpec::linear(1.0);
        let QuantumState::Mixed(m) = thermal_state(&spec, &b, 0.0).unwrap() else { panic!() };
        assert_eq!(m.rho()[(0, 0)], C::new(1.0, 0.0));
        assert!((m.rho().iter().map(|z| z.norm()).sum::<f64>() - 1.0).abs() < 1e-15);
        let err = thermal_state(&spec, &b, 500.0).unwrap_err();
        assert!(matches!(err, RotorError::Truncation { .. }));
    }

    #[test]
    fn m_blocks_are_conserved_under_z_field() {
        let b = lin(16);
        let spec = RotorSpec::linear(1.0).with_polarizability(3.0, 1.0);
        let h0 = free_hamiltonian(&spec, &b).unwrap();
        let v = averaged_interaction(&spec, &b, [0.0, 0.0, 1.0], [0.0; 3]).unwrap();
        let ham = DrivenHamiltonian::new(h0, vec![v], |t| vec![20.0 * (-(t - 0.2f64).powi(2) / 0.005).exp()], vec![]).unwrap();
        let psi = PureState::superposition(
            b.clone(),
            &[
                (RotorState::new(1, 0, 1), C::new(1.0, 0.0)),
                (RotorState::new(2, 0, 0), C::new(0.5, 0.2)),
                (RotorState::new(3, 0, -2), C::new(0.1, -0.7)),
            ],
        )
        .unwrap();
        let before: Vec<f64> = (-2..=1).map(|m| b.m_block(m).iter().map(|&i| psi.populations()[i]).sum()).collect();
        let grid = TimeGrid::uniform(0.0, 0.4, 4).unwrap();
        let traj = propagate_schrodinger(&psi, &ham, &grid, &[], &PropagationOptions::with_step(0.001)).unwrap();
        let pops = traj.final_state.populations();
        for (k, m) in (-2..=1).enumerate() {
            let after: f64 = b.m_block(m).iter().map(|&i| pops[i]).sum();
            assert!((after - before[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn dephasing_keeps_populations_and_damps_coherence() {
        let b = lin(4);
        let spec = RotorSpec::linear(1.0);
        let h0 = free_hamiltonian(&spec, &b).unwrap();
        let psi = PureState::superposition(
            b.clone(),
            &[(RotorState::new(0, 0, 0), C::new(1.0, 0.0)), (RotorState::new(2, 0, 0), C::new(1.0, 0.0))],
        )
        .unwrap();
        let l = energy_dephasing(&h0, 2.0).unwrap();
        let ham = DrivenHamiltonian::free(h0);
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let opts = PropagationOptions::with_step(0.01).without_watchdog();
        let i2 = b.index_of(RotorState::new(2, 0, 0)).unwrap();
        let coh = Operator::from_upper(b.clone(), [(0, i2, C::new(1.0, 0.0))]);
        let traj = propagate_lindblad(
            &MixedState::from_pure(&psi),
            &ham,
            &[l],
            &grid,
            &[Probe::new("coh", coh)],
            &opts,
        )
        .unwrap();
        let c = traj.series("coh").unwrap();
        // |ρ_02| = ½ exp(-γ/2 · t) with E_ref = 20 = E of j=4 and ΔE = 6
        let rate = 2.0 * 36.0 / (2.0 * 400.0);
        for (t, v) in traj.times.iter().zip(&c) {
            let amp = 0.5 * (-rate * t).exp();
            let want = 2.0 * amp * (6.0 * t).cos();
            assert!((v - want).abs() < 1e-8, "{t} {v} {want}");
        }
        let pops = traj.final_state.populations();
        assert!((pops[0] - 0.5).abs() < 1e-12 && (pops[i2] - 0.5).abs() < 1e-12);
        assert!(traj.max_norm_error < 1e-8);
    }

    #[test]
    fn lindblad_without_collapse_matches_lvn() {
        let b = lin(10);
        let spec = RotorSpec::linear(1.0).with_dipole(1.0);
        let h0 = free_hamiltonian(&spec, &b).unwrap();
        let cz = direction_cosine(&b, SpaceAxis::Z);
        let ham = DrivenHamiltonian::new(h0, vec![cz.clone()], |t| vec![3.0 * (5.0 * t).sin()], vec![]).unwrap();
        let psi = ket(&b, 1, 0);
        let rho = MixedState::from_pure(&psi);
        let grid = TimeGrid::uniform(0.0, 0.5, 5).unwrap();
        let probes = [Probe::new("cz", cz)];
        let opts = PropagationOptions::with_step(1e-3);
        let a = propagate_lvn(&rho, &ham, &grid, &probes, &opts).unwrap();
        let l = propagate_lindblad(&rho, &ham, &[], &grid, &probes, &opts).unwrap();
        for (x, y) in a.values.iter().zip(&l.values) {
            assert!((x[0] - y[0]).abs() < 2e-6, "{} {}", x[0], y[0]);
        }
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let b = lin(20);
        let spec = RotorSpec::linear(1.0).with_polarizability(2.0, 1.0);
        let ens = thermal_ensemble(&spec, &b, 3.0).unwrap();
        let kick = PulseSpec::KickTrain {
            start: 0.1,
            period: 0.7,
            count: 2,
            strength: 1.5,
        };
        let ham = DrivenHamiltonian::from_pulses(&spec, &b, &[kick]).unwrap();
        let probes = [Probe::new("c2z", cos_product(&b, SpaceAxis::Z, SpaceAxis::Z))];
        let grid = TimeGrid::uniform(0.0, 1.0, 20).unwrap();
        let run = |e: Execution| {
            propagate_ensemble(&ens, &ham, &grid, &probes, &PropagationOptions::with_step(2e-4).execution(e)).unwrap()
        };
        let s = run(Execution::Sequential);
        let p = run(Execution::Parallel);
        assert_eq!(s.values, p.values);
    }
}
