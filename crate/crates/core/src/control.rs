//! Pulse-parameter optimisation.
//!
//! A [`ControlProblem`] names free parameters of a pulse template by pulse
//! index and parameter name, each with finite bounds. Optimisers work in the
//! unit cube and map back linearly, so every evaluated point lies inside the
//! declared bounds.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::dynamics::{propagate, DrivenHamiltonian, Probe, PropagationOptions, PureState, QuantumState, TimeGrid};
use crate::error::{Result, RotorError};
use crate::exec::Execution;
use crate::hamiltonian::RotorSpec;
use crate::linalg::eigh;
use crate::observables::time_average;
use crate::operator::Operator;
use crate::pulses::PulseSpec;

type C = Complex64;

/// Top eigenpair of `P op P` with `P` projecting onto `j <= j_opt` within
/// the `m` block. The eigenvector's largest component is made real and
/// positive.
pub fn projected_target(basis: &Arc<BasisSet>, op: &Operator, j_opt: u32, m: i32) -> Result<(PureState, f64)> {
    op.basis().require_same(basis)?;
    if j_opt + 2 > basis.j_max() {
        return Err(RotorError::InvalidInput(format!(
            "j_opt = {j_opt} needs j_max >= {}, basis has {}",
            j_opt + 2,
            basis.j_max()
        )));
    }
    let idx: Vec<usize> = basis
        .states()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.j <= j_opt && s.m == m)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(RotorError::QuantumNumbers(format!("no states with j <= {j_opt} and m = {m}")));
    }
    let block: DMatrix<C> = op.dense_block(&idx);
    let (vals, vecs) = eigh(&block);
    let top = vals
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > vals[best] { i } else { best });
    let col = vecs.column(top);
    let lead = col.iter().fold(C::new(0.0, 0.0), |a, z| if z.norm() > a.norm() + 1e-14 { *z } else { a });
    let phase = lead.conj() / lead.norm();
    let mut psi = vec![C::new(0.0, 0.0); basis.dim()];
    for (p, &i) in idx.iter().enumerate() {
        psi[i] = col[p] * phase;
    }
    Ok((PureState::normalized(basis.clone(), psi)?, vals[top]))
}

#[derive(Debug, Clone)]
pub enum Objective {
    /// `⟨op⟩` at `time`.
    ExpectationAtTime { op: Operator, time: f64 },
    /// `⟨target|ρ(time)|target⟩`.
    TargetFidelity { target: PureState, time: f64 },
    /// Time average of `⟨op⟩` over `[start, end]` sampled at `samples + 1`
    /// points.
    TimeWindowAverage { op: Operator, start: f64, end: f64, samples: usize },
}

impl Objective {
    fn grid(&self, t0: f64) -> Result<TimeGrid> {
        let span = |t: f64| if t > t0 { TimeGrid::from_times(vec![t0, t]) } else { TimeGrid::from_times(vec![t0]) };
        match self {
            Objective::ExpectationAtTime { time, .. } | Objective::TargetFidelity { time, .. } => {
                if *time < t0 {
                    return Err(RotorError::InvalidInput("objective time precedes the start time".into()));
                }
                span(*time)
            }
            Objective::TimeWindowAverage { start, end, samples, .. } => {
                if !(*start >= t0 && end > start) || *samples == 0 {
                    return Err(RotorError::InvalidInput("objective window must satisfy t0 <= start < end".into()));
                }
                let mut times: Vec<f64> = if *start > t0 { vec![t0] } else { vec![] };
                times.extend(TimeGrid::uniform(*start, *end, *samples)?.times());
                TimeGrid::from_times(times)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeParameter {
    /// Index into the problem's pulse list.
    pub pulse: usize,
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub spec: RotorSpec,
    pub initial: QuantumState,
    pub pulses: Vec<PulseSpec>,
    pub parameters: Vec<FreeParameter>,
    pub objective: Objective,
    /// Weight `λ >= 0` on the total pulse fluence.
    pub penalty: f64,
    pub t_start: f64,
    pub options: PropagationOptions,
}

impl ControlProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return Err(RotorError::InvalidInput(format!("penalty must be >= 0, got {}", self.penalty)));
        }
        if self.parameters.is_empty() {
            return Err(RotorError::InvalidInput("control problem has no free parameters".into()));
        }
        for p in &self.parameters {
            if !(p.lower.is_finite() && p.upper.is_finite() && p.lower < p.upper) {
                return Err(RotorError::InvalidInput(format!(
                    "parameter `{}` needs finite bounds with lower < upper",
                    p.name
                )));
            }
            let pulse = self
                .pulses
                .get(p.pulse)
                .ok_or_else(|| RotorError::InvalidInput(format!("parameter `{}` refers to missing pulse {}", p.name, p.pulse)))?;
            pulse.parameter(&p.name)?;
        }
        Ok(())
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.parameters.iter().map(|p| (p.lower, p.upper)).collect()
    }

    /// Pulse list with `params` substituted.
    pub fn pulses_for(&self, params: &[f64]) -> Result<Vec<PulseSpec>> {
        if params.len() != self.parameters.len() {
            return Err(RotorError::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.parameters.len(),
                params.len()
            )));
        }
        let mut pulses = self.pulses.clone();
        for (p, v) in self.parameters.iter().zip(params) {
            if !(*v >= p.lower && *v <= p.upper) {
                return Err(RotorError::InvalidInput(format!(
                    "parameter `{}` = {v} outside [{}, {}]",
                    p.name, p.lower, p.upper
                )));
            }
            pulses[p.pulse].set_parameter(&p.name, *v)?;
        }
        for p in &pulses {
            p.validate()?;
        }
        Ok(pulses)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `figure_of_merit - λ·energy`.
    pub value: f64,
    pub figure_of_merit: f64,
    /// Total fluence of the pulse list.
    pub energy: f64,
    /// Largest population seen in the watched edge shells.
    pub max_edge_population: f64,
}

fn fidelity(target: &PureState, state: &QuantumState) -> f64 {
    let t = target.amplitudes();
    let ov = |psi: &[C]| -> C { t.iter().zip(psi).map(|(a, b)| a.conj() * b).sum() };
    match state {
        QuantumState::Pure(p) => ov(p.amplitudes()).norm_sqr(),
        QuantumState::Ensemble(e) => e.weights().iter().zip(e.members()).map(|(w, psi)| w * ov(psi).norm_sqr()).sum(),
        QuantumState::Mixed(m) => {
            let v = nalgebra::DVector::from_column_slice(t);
            (v.adjoint() * m.rho() * &v)[(0, 0)].re
        }
    }
}

pub fn evaluate(problem: &ControlProblem, params: &[f64]) -> Result<Evaluation> {
    let pulses = problem.pulses_for(params)?;
    let basis = problem.initial.basis();
    let ham = DrivenHamiltonian::from_pulses(&problem.spec, basis, &pulses)?;
    let grid = problem.objective.grid(problem.t_start)?;
    let probes = match &problem.objective {
        Objective::ExpectationAtTime { op, .. } | Objective::TimeWindowAverage { op, .. } => vec![Probe::new("objective", op.clone())],
        Objective::TargetFidelity { .. } => vec![],
    };
    let traj = propagate(&problem.initial, &ham, &grid, &probes, &problem.options)?;
    let fom = match &problem.objective {
        Objective::ExpectationAtTime { .. } => *traj.values.last().unwrap().first().unwrap(),
        Objective::TargetFidelity { target, .. } => fidelity(target, &traj.final_state),
        Objective::TimeWindowAverage { start, .. } => {
            let k = traj.times.partition_point(|t| t < start);
            let vals: Vec<f64> = traj.values[k..].iter().map(|r| r[0]).collect();
            time_average(&traj.times[k..], &vals)
        }
    };
    let energy: f64 = pulses.iter().map(|p| p.fluence(problem.spec.delta_alpha())).sum();
    Ok(Evaluation {
        value: fom - problem.penalty * energy,
        figure_of_merit: fom,
        energy,
        max_edge_population: traj.max_edge_population,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    /// Nelder-Mead simplex from `initial` (random if absent) with edge
    /// `step` in unit-cube coordinates.
    Simplex {
        #[serde(default)]
        initial: Option<Vec<f64>>,
        #[serde(default = "default_step")]
        step: f64,
    },
    /// DE/rand/1/bin.
    Evolution {
        #[serde(default = "default_population")]
        population: usize,
        #[serde(default = "default_mutation")]
        mutation: f64,
        #[serde(default = "default_crossover")]
        crossover: f64,
    },
}

fn default_step() -> f64 {
    0.2
}
fn default_population() -> usize {
    12
}
fn default_mutation() -> f64 {
    0.7
}
fn default_crossover() -> f64 {
    0.9
}

impl Method {
    pub fn simplex() -> Self {
        Method::Simplex {
            initial: None,
            step: default_step(),
        }
    }

    pub fn evolution() -> Self {
        Method::Evolution {
            population: default_population(),
            mutation: default_mutation(),
            crossover: default_crossover(),
        }
    }

    /// Smallest useful evaluation budget.
    pub fn minimum_budget(&self, dim: usize) -> usize {
        match self {
            Method::Simplex { .. } => dim + 1,
            Method::Evolution { population, .. } => *population,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub index: usize,
    pub params: Vec<f64>,
    pub value: f64,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best_params: Vec<f64>,
    pub best_value: f64,
    pub history: Vec<HistoryEntry>,
    pub evaluations: usize,
    /// Stopped because the budget ran out rather than by convergence.
    pub budget_exhausted: bool,
}

struct Tracker<'a, F> {
    f: &'a F,
    bounds: &'a [(f64, f64)],
    budget: usize,
    history: Vec<HistoryEntry>,
    best: Option<(Vec<f64>, f64)>,
}

impl<F: Fn(&[f64]) -> Result<f64> + Sync> Tracker<'_, F> {
    fn to_params(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.bounds)
            .map(|(x, (lo, hi))| {
                let x = x.clamp(0.0, 1.0);
                (lo + x * (hi - lo)).clamp(*lo, *hi)
            })
            .collect()
    }

    fn remaining(&self) -> usize {
        self.budget - self.history.len()
    }

    fn record(&mut self, params: Vec<f64>, value: f64) {
        let improved = match &self.best {
            None => true,
            Some((_, b)) => value > *b,
        };
        if improved {
            self.best = Some((params.clone(), value));
        }
        let best = self.best.as_ref().unwrap().1;
        self.history.push(HistoryEntry {
            index: self.history.len(),
            params,
            value,
            best,
        });
    }

    fn eval(&mut self, u: &[f64]) -> Result<f64> {
        let p = self.to_params(u);
        let v = (self.f)(&p)?;
        let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
        self.record(p, v);
        Ok(v)
    }

    fn eval_batch(&mut self, us: &[Vec<f64>], exec: Execution) -> Result<Vec<f64>> {
        let ps: Vec<Vec<f64>> = us.iter().map(|u| self.to_params(u)).collect();
        let f = self.f;
        let vals = exec.map(&ps, |p| f(p));
        let mut out = Vec::with_capacity(vals.len());
        for (p, v) in ps.into_iter().zip(vals) {
            let v = v?;
            let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
            self.record(p, v);
            out.push(v);
        }
        Ok(out)
    }
}

/// Maximise `f` over the box `bounds` with at most `budget` evaluations.
/// Deterministic for a given `seed`; evaluation errors abort the search.
pub fn maximize<F>(f: &F, bounds: &[(f64, f64)], method: &Method, budget: usize, seed: u64, exec: Execution) -> Result<OptimizationResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let n = bounds.len();
    if n == 0 {
        return Err(RotorError::InvalidInput("nothing to optimise".into()));
    }
    if bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
        return Err(RotorError::InvalidInput("bounds must be finite with lower < upper".into()));
    }
    if budget < method.minimum_budget(n) {
        return Err(RotorError::InvalidInput(format!(
            "budget {budget} is below the minimum {} for this method",
            method.minimum_budget(n)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = Tracker {
        f,
        bounds,
        budget,
        history: Vec::new(),
        best: None,
    };
    let converged = match method {
        Method::Simplex { initial, step } => {
            let u0: Vec<f64> = match initial {
                Some(x) => {
                    if x.len() != n {
                        return Err(RotorError::InvalidInput("initial point has wrong dimension".into()));
                    }
                    x.iter().zip(bounds).map(|(v, (lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
                }
                None => (0..n).map(|_| rng.random::<f64>()).collect(),
            };
            nelder_mead(&mut tr, u0, *step)?
        }
        Method::Evolution {
            population,
            mutation,
            crossover,
        } => {
            if *population < 4 {
                return Err(RotorError::InvalidInput("evolution needs a population of at least 4".into()));
            }
            evolution(&mut tr, &mut rng, *population, *mutation, *crossover, exec)?
        }
    };
    let (best_params, best_value) = tr.best.clone().unwrap();
    Ok(OptimizationResult {
        best_params,
        best_value,
        evaluations: tr.history.len(),
        budget_exhausted: !converged,
        history: tr.history,
    })
}

fn nelder_mead<F: Fn(&[f64]) -> Result<f64> + Sync>(tr: &mut Tracker<'_, F>, u0: Vec<f64>, step: f64) -> Result<bool> {
    let n = u0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = tr.eval(&u0)?;
    simplex.push((u0.clone(), v0));
    for i in 0..n {
        let mut u = u0.clone();
        u[i] = if u[i] + step <= 1.0 { u[i] + step } else { u[i] - step };
        let v = tr.eval(&u)?;
        simplex.push((u, v));
    }
    let clamp = |u: Vec<f64>| -> Vec<f64> { u.into_iter().map(|x| x.clamp(0.0, 1.0)).collect() };
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect() };
    loop {
        // best first; stable sort keeps earlier vertices ahead on ties
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let spread = simplex[0].1 - simplex[n].1;
        let size = simplex[1..]
            .iter()
            .flat_map(|(u, _)| u.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread.abs() <= 1e-12 * simplex[0].1.abs().max(1e-12) && size < 1e-9 {
            return Ok(true);
        }
        if tr.remaining() == 0 {
            return Ok(false);
        }
        let centroid: Vec<f64> = (0..n).map(|d| simplex[..n].iter().map(|(u, _)| u[d]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let xr = clamp(lerp(&centroid, &worst.0, -1.0));
        let fr = tr.eval(&xr)?;
        if fr > simplex[0].1 {
            if tr.remaining() == 0 {
                simplex[n] = (xr, fr);
                continue;
            }
            let xe = clamp(lerp(&centroid, &worst.0, -2.0));
            let fe = tr.eval(&xe)?;
            simplex[n] = if fe > fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr > simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        if tr.remaining() == 0 {
            continue;
        }
        let (xc, fc) = if fr > worst.1 {
            let xc = clamp(lerp(&centroid, &xr, 0.5));
            let fc = tr.eval(&xc)?;
            (xc, fc)
        } else {
            let xc = clamp(lerp(&centroid, &worst.0, 0.5));
            let fc = tr.eval(&xc)?;
            (xc, fc)
        };
        if fc > fr.max(worst.1) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            if tr.remaining() == 0 {
                break;
            }
            let u = lerp(&best, &v.0, 0.5);
            let f = tr.eval(&u)?;
            *v = (u, f);
        }
    }
}

fn evolution<F: Fn(&[f64]) -> Result<f64> + Sync>(
    tr: &mut Tracker<'_, F>,
    rng: &mut ChaCha8Rng,
    np: usize,
    mutation: f64,
    crossover: f64,
    exec: Execution,
) -> Result<bool> {
    let n = tr.bounds.len();
    let mut pop: Vec<Vec<f64>> = (0..np).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
    let mut fit = tr.eval_batch(&pop, exec)?;
    while tr.remaining() > 0 {
        let take = tr.remaining().min(np);
        let trials: Vec<Vec<f64>> = (0..take)
            .map(|i| {
                let mut pick = || loop {
                    let r = rng.random_range(0..np);
                    if r != i {
                        break r;
                    }
                };
                let (a, b, c) = loop {
                    let (a, b, c) = (pick(), pick(), pick());
                    if a != b && b != c && a != c {
                        break (a, b, c);
                    }
                };
                let forced = rng.random_range(0..n);
                (0..n)
                    .map(|d| {
                        if d == forced || rng.random::<f64>() < crossover {
                            (pop[a][d] + mutation * (pop[b][d] - pop[c][d])).clamp(0.0, 1.0)
                        } else {
                            pop[i][d]
                        }
                    })
                    .collect()
            })
            .collect();
        let vals = tr.eval_batch(&trials, exec)?;
        for (i, (u, v)) in trials.into_iter().zip(vals).enumerate() {
            if v >= fit[i] {
                pop[i] = u;
                fit[i] = v;
            }
        }
        let hi = fit.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = fit.iter().copied().fold(f64::INFINITY, f64::min);
        if hi - lo <= 1e-13 * hi.abs().max(1e-12) {
            return Ok(true);
        }
    }
    Ok(false)
}

pub fn optimize(problem: &ControlProblem, method: &Method, budget: usize, seed: u64) -> Result<OptimizationResult> {
    problem.validate()?;
    let f = |p: &[f64]| evaluate(problem, p).map(|e| e.value);
    maximize(&f, &problem.bounds(), method, budget, seed, problem.options.execution)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScan {
    pub best_params: Vec<f64>,
    pub best_value: f64,
    /// Every grid point in lexicographic order (first parameter slowest).
    pub points: Vec<(Vec<f64>, f64)>,
}

/// Evaluate `f` on a Cartesian grid with `counts[d]` points spanning each
/// bound inclusively. Ties go to the earliest point, i.e. the lowest
/// parameter values.
pub fn grid_scan<F>(f: &F, bounds: &[(f64, f64)], counts: &[usize], exec: Execution) -> Result<GridScan>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if bounds.len() != counts.len() || bounds.is_empty() || counts.contains(&0) {
        return Err(RotorError::InvalidInput("grid scan needs one non-zero count per bound".into()));
    }
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .zip(counts)
        .map(|(&(lo, hi), &n)| {
            if n == 1 {
                vec![lo]
            } else {
                (0..n).map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
            }
        })
        .collect();
    let total: usize = counts.iter().product();
    let pts: Vec<Vec<f64>> = (0..total)
        .map(|mut k| {
            let mut p = vec![0.0; axes.len()];
            for d in (0..axes.len()).rev() {
                p[d] = axes[d][k % counts[d]];
                k /= counts[d];
            }
            p
        })
        .collect();
    let vals = exec.map(&pts, |p| f(p));
    let mut points = Vec::with_capacity(total);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for (p, v) in pts.into_iter().zip(vals) {
        let v = v?;
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((p.clone(), v));
        }
        points.push((p, v));
    }
    let (best_params, best_value) = best.unwrap();
    Ok(GridScan {
        best_params,
        best_value,
        points,
    })
}

/// Central finite-difference gradient with step `1e-4·(upper - lower)`,
/// one-sided where a bound would be crossed.
pub fn gradient<F>(f: &F, x: &[f64], bounds: &[(f64, f64)]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let f0 = f(x)?;
    let mut g = Vec::with_capacity(x.len());
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        let h = 1e-4 * (hi - lo);
        let mut up = x.to_vec();
        let mut dn = x.to_vec();
        let (fu, a) = if x[d] + h <= hi {
            up[d] += h;
            (f(&up)?, h)
        } else {
            (f0, 0.0)
        };
        let (fd, b) = if x[d] - h >= lo {
            dn[d] -= h;
            (f(&dn)?, h)
        } else {
            (f0, 0.0)
        };
        g.push((fu - fd) / (a + b));
    }
    Ok(g)
}
