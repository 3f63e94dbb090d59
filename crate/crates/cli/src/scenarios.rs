//! The canned scenarios behind each subcommand.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::Vector3;
use rotkit::basis::{BasisSet, RotorState, TopClass};
use rotkit::classical::{
    classify, elliptic_period, em_diagram, flip_period, integrate_euler, tennis_racket_flips, ClassicalState,
    InertiaSpec, Motion,
};
use rotkit::control::{optimize as run_optimizer, projected_target, ControlProblem, Objective};
use rotkit::dynamics::{
    energy_dephasing, propagate, propagate_lindblad, propagate_lvn, thermal_ensemble, thermalizing_decay,
    CollapseOperator, DrivenHamiltonian, Probe, PropagationOptions, PureState, QuantumState, TimeGrid, Trajectory,
};
use rotkit::error::RotorError;
use rotkit::exec::Execution;
use rotkit::hamiltonian::{cos_product, direction_cosine, free_hamiltonian, RotorSpec, SpaceAxis};
use rotkit::linalg::eigh;
use rotkit::observables::{
    alignment_series, detect_features, echo_difference, echo_ratio, time_average, AlignmentOperators, Feature,
};
use rotkit::operator::{BlockStructure, Operator};
use rotkit::pulses::PulseSpec;
use serde_json::{json, Value};

use crate::config::{ConfigError, InitialState, ObjectiveSection, PropagationMethod, RunConfig};
use crate::output::{num, nums, Cell, PlotSpec, Report, Table};

/// Largest `dt·max|E|` the automatic step choice aims for.
const AUTO_STEP_PRODUCT: f64 = 0.4;
const DEFAULT_MAX_STEP: f64 = 1e-3;

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Numerical(RotorError),
    Io(std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Numerical(_) => 2,
            RunError::Config(_) | RunError::Io(_) => 1,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config error: {e}"),
            RunError::Numerical(e) => write!(f, "numerical failure: {e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

/// Attribute a library error to config key `key` unless it is numerical.
fn at(key: &'static str) -> impl Fn(RotorError) -> RunError {
    move |e| {
        if e.is_numerical() {
            RunError::Numerical(e)
        } else {
            RunError::Config(ConfigError::new(key, e.to_string()))
        }
    }
}

type Run<T> = Result<T, RunError>;

struct Setup {
    spec: RotorSpec,
    basis: Arc<BasisSet>,
    initial: QuantumState,
}

fn setup(cfg: &RunConfig) -> Run<Setup> {
    let spec = cfg.spec();
    let basis = Arc::new(BasisSet::new(cfg.basis.top, cfg.basis.j_max));
    let initial = initial_state(&cfg.initial, &spec, &basis)?;
    Ok(Setup { spec, basis, initial })
}

fn initial_state(init: &InitialState, spec: &RotorSpec, basis: &Arc<BasisSet>) -> Run<QuantumState> {
    Ok(match *init {
        InitialState::Pure { j, k, m } => QuantumState::Pure(
            PureState::basis_state(basis.clone(), RotorState::new(j, k, m)).map_err(at("initial"))?,
        ),
        InitialState::Thermal { temperature } => {
            QuantumState::Ensemble(thermal_ensemble(spec, basis, temperature).map_err(at("initial.temperature"))?)
        }
    })
}

fn row_sum_norm(op: &Operator) -> f64 {
    (0..op.dim())
        .map(|r| op.row(r).map(|(_, z)| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Upper bound on `max|E|` of `H(t)` over `[t0, t1]`, sampling the drive on
/// a uniform grid and densely inside each pulse's support.
fn spectral_bound(ham: &DrivenHamiltonian, pulses: &[PulseSpec], t0: f64, t1: f64) -> f64 {
    let norms: Vec<f64> = ham.channels().iter().map(row_sum_norm).collect();
    if norms.is_empty() {
        return ham.free_spectral_radius();
    }
    let mut times: Vec<f64> = (0..=4000).map(|i| t0 + (t1 - t0) * i as f64 / 4000.0).collect();
    for p in pulses {
        if let Some((a, b)) = p.support() {
            times.extend((0..=400).map(|i| a + (b - a) * i as f64 / 400.0));
        }
    }
    let mut peak = vec![0.0f64; norms.len()];
    for t in times {
        for (p, c) in peak.iter_mut().zip(ham.coefficients(t)) {
            *p = p.max(c.abs());
        }
    }
    ham.free_spectral_radius() + peak.iter().zip(&norms).map(|(c, n)| c * n).sum::<f64>()
}

fn options(cfg: &RunConfig, bound: f64) -> PropagationOptions {
    let d = &cfg.dynamics;
    let step = d
        .max_step
        .unwrap_or_else(|| if bound > 0.0 { DEFAULT_MAX_STEP.min(AUTO_STEP_PRODUCT / bound) } else { DEFAULT_MAX_STEP });
    PropagationOptions {
        max_step: step,
        truncation_limit: d.truncation_limit,
        watchdog_shells: d.watchdog_shells,
        lindblad_tolerance: d.lindblad_tolerance,
        execution: Execution::Parallel,
        ..PropagationOptions::default()
    }
}

fn grid(cfg: &RunConfig) -> Run<TimeGrid> {
    let d = &cfg.dynamics;
    TimeGrid::uniform(d.t_start, d.t_end, d.intervals).map_err(at("dynamics"))
}

fn collapse_operators(cfg: &RunConfig, spec: &RotorSpec, basis: &Arc<BasisSet>, h0: &Operator) -> Run<Vec<CollapseOperator>> {
    let mut out = Vec::new();
    if let Some(g) = cfg.dynamics.dephasing {
        if g > 0.0 {
            out.push(energy_dephasing(h0, g).map_err(at("dynamics.dephasing"))?);
        }
    }
    if let Some(t) = &cfg.dynamics.thermalizing {
        if t.gamma > 0.0 {
            out.extend(thermalizing_decay(spec, basis, t.gamma, t.temperature).map_err(at("dynamics.thermalizing"))?);
        }
    }
    Ok(out)
}

/// Propagate with the representation the config asks for.
fn evolve(
    cfg: &RunConfig,
    s: &Setup,
    ham: &DrivenHamiltonian,
    grid: &TimeGrid,
    probes: &[Probe],
    opts: &PropagationOptions,
) -> Run<Trajectory> {
    let collapse = collapse_operators(cfg, &s.spec, &s.basis, ham.h0())?;
    let method = cfg.dynamics.method;
    if !collapse.is_empty() || method == PropagationMethod::Lindblad {
        propagate_lindblad(&s.initial.to_mixed(), ham, &collapse, grid, probes, opts).map_err(at("dynamics"))
    } else if method == PropagationMethod::Lvn {
        propagate_lvn(&s.initial.to_mixed(), ham, grid, probes, opts).map_err(at("dynamics"))
    } else {
        propagate(&s.initial, ham, grid, probes, opts).map_err(at("dynamics"))
    }
}

fn driven(s: &Setup, pulses: &[PulseSpec]) -> Run<DrivenHamiltonian> {
    DrivenHamiltonian::from_pulses(&s.spec, &s.basis, pulses).map_err(at("pulses"))
}

fn features_json(features: &[Feature]) -> Value {
    Value::Array(
        features
            .iter()
            .map(|f| {
                json!({
                    "time": num(f.time),
                    "value": num(f.value),
                    "kind": serde_json::to_value(f.kind).expect("kind serializes"),
                    "prominence": num(f.prominence),
                })
            })
            .collect(),
    )
}

fn common_summary(report: &mut Report, cfg: &RunConfig, s: &Setup) {
    report.set("scenario", cfg.scenario.clone().map(Value::String).unwrap_or(Value::Null));
    report.set("top", serde_json::to_value(cfg.basis.top).expect("top serializes"));
    report.set("j_max", cfg.basis.j_max);
    report.set("dim", s.basis.dim());
}

fn revival_time(spec: &RotorSpec) -> Option<f64> {
    spec.top.is_linear().then(|| PI / spec.b)
}

fn state_json(state: &QuantumState) -> Value {
    let basis = state.basis();
    let labels: Vec<Value> = basis.states().iter().map(|s| json!([s.j, s.k, s.m])).collect();
    let head = json!({ "top": serde_json::to_value(basis.top()).expect("top serializes"), "j_max": basis.j_max(), "states": labels });
    let split = |v: &[num_complex::Complex64]| {
        let re: Vec<f64> = v.iter().map(|z| z.re).collect();
        let im: Vec<f64> = v.iter().map(|z| z.im).collect();
        json!({ "re": nums(&re), "im": nums(&im) })
    };
    match state {
        QuantumState::Pure(p) => json!({ "kind": "pure", "basis": head, "amplitudes": split(p.amplitudes()) }),
        QuantumState::Ensemble(e) => json!({
            "kind": "ensemble",
            "basis": head,
            "weights": nums(e.weights()),
            "members": e.members().iter().map(|m| split(m)).collect::<Vec<_>>(),
        }),
        QuantumState::Mixed(m) => {
            let rows: Vec<Value> = m.rho().row_iter().map(|r| split(&r.iter().copied().collect::<Vec<_>>())).collect();
            json!({ "kind": "mixed", "basis": head, "rho_rows": rows })
        }
    }
}

/// Free-rotor energy levels grouped by `j` with their degeneracies.
pub fn spectrum(cfg: &RunConfig) -> Run<Report> {
    let s = setup_without_state(cfg)?;
    let h0 = free_hamiltonian(&s.spec, &s.basis).map_err(at("rotor"))?;
    let blocks = BlockStructure::from_operators(s.basis.dim(), &[&h0]);
    let mut levels: Vec<(u32, f64)> = Vec::new();
    for idx in blocks.blocks() {
        let j = s.basis.state_at(idx[0]).j;
        let (vals, _) = eigh(&h0.dense_block(idx));
        levels.extend(vals.into_iter().map(|e| (j, e)));
    }
    levels.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut grouped: Vec<(u32, f64, usize)> = Vec::new();
    for (j, e) in levels {
        match grouped.last_mut() {
            Some((gj, ge, n)) if *gj == j && (e - *ge).abs() <= 1e-9 * ge.abs().max(1.0) => *n += 1,
            _ => grouped.push((j, e, 1)),
        }
    }
    grouped.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut table = Table::new("spectrum", &["level", "j", "energy", "degeneracy"]);
    for (i, (j, e, n)) in grouped.iter().enumerate() {
        table.push(vec![i.into(), (*j).into(), (*e).into(), (*n).into()]);
    }
    let mut report = Report::default();
    common_summary(&mut report, cfg, &s);
    report.set("levels", grouped.len());
    report.set("ground_energy", num(grouped.first().map(|g| g.1).unwrap_or(0.0)));
    report.plots.push(PlotSpec::new("spectrum", "j", &["energy"], "Free-rotor levels", "j", "energy (rad/ps)"));
    report.tables.push(table);
    Ok(report)
}

fn setup_without_state(cfg: &RunConfig) -> Run<Setup> {
    let spec = cfg.spec();
    let basis = Arc::new(BasisSet::new(cfg.basis.top, cfg.basis.j_max));
    let initial = QuantumState::Pure(PureState::basis_state(basis.clone(), RotorState::new(0, 0, 0)).map_err(at("basis"))?);
    Ok(Setup { spec, basis, initial })
}

/// Alignment time series under the configured pulses.
pub fn align(cfg: &RunConfig) -> Run<Report> {
    let s = setup(cfg)?;
    let ham = driven(&s, &cfg.pulses)?;
    let grid = grid(cfg)?;
    let opts = options(cfg, spectral_bound(&ham, &cfg.pulses, grid.start(), grid.end()));
    let ops = AlignmentOperators::new(&s.spec, &s.basis).map_err(at("rotor"))?;
    let traj = evolve(cfg, &s, &ham, &grid, &ops.probes(), &opts)?;
    let series = alignment_series(&traj).map_err(at("observables"))?;

    let mut table = Table::new(
        "align",
        &["t_ps", "cos_z", "cos2_x", "cos2_y", "cos2_z", "energy", "j2", "sumrule_residual"],
    );
    for (i, (t, r)) in series.iter().enumerate() {
        if i % cfg.observables.cadence == 0 || i + 1 == series.len() {
            table.push(vec![
                (*t).into(),
                r.cos[2].into(),
                r.cos2[0].into(),
                r.cos2[1].into(),
                r.cos2[2].into(),
                r.energy.into(),
                r.j2.into(),
                r.sum_rule_residual().into(),
            ]);
        }
    }
    let times: Vec<f64> = series.iter().map(|(t, _)| *t).collect();
    let c2: Vec<f64> = series.iter().map(|(_, r)| r.cos2[2]).collect();
    let features = detect_features(&times, &c2, cfg.observables.min_prominence);
    let (imax, cmax) = c2.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, v)| if v > a.1 { (i, v) } else { a });
    let cmin = c2.iter().copied().fold(f64::INFINITY, f64::min);
    let residual = series.iter().map(|(_, r)| r.sum_rule_residual()).fold(0.0, f64::max);
    let last = series.last().expect("grid has at least one time").1;

    let mut report = Report::default();
    common_summary(&mut report, cfg, &s);
    report.set("max_step", num(opts.max_step));
    report.set("revival_time", revival_time(&s.spec).map(num).unwrap_or(Value::Null));
    report.set("max_norm_error", num(traj.max_norm_error));
    report.set("max_edge_population", num(traj.max_edge_population));
    report.set("max_sumrule_residual", num(residual));
    report.set("min_eigenvalue", traj.min_eigenvalue.map(num).unwrap_or(Value::Null));
    report.set("cos2_z_max", num(cmax));
    report.set("cos2_z_max_time", num(times[imax]));
    report.set("cos2_z_min", num(cmin));
    report.set("cos2_z_mean", num(time_average(&times, &c2)));
    report.set(
        "final",
        json!({
            "cos": nums(&last.cos),
            "cos2": nums(&last.cos2),
            "energy": num(last.energy),
            "j2": num(last.j2),
        }),
    );
    report.set("features", features_json(&features));
    if cfg.observables.save_state {
        report.documents.push(("state".into(), state_json(&traj.final_state)));
    }
    report.plots.push(PlotSpec::new(
        "align",
        "t_ps",
        &["cos2_x", "cos2_y", "cos2_z"],
        "Alignment",
        "t (ps)",
        "<cos^2>",
    ));
    report.plots.push(PlotSpec::new("align", "t_ps", &["cos_z"], "Orientation", "t (ps)", "<cos>"));
    report.tables.push(table);
    Ok(report)
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect()
}

/// Least-squares amplitude `A` of `v ≈ A cos φ` and the largest deviation
/// relative to `|A|`.
pub fn cosine_fit(phis: &[f64], values: &[f64]) -> (f64, f64) {
    let c: Vec<f64> = phis.iter().map(|p| p.cos()).collect();
    let a = c.iter().zip(values).map(|(c, v)| c * v).sum::<f64>() / c.iter().map(|c| c * c).sum::<f64>();
    let dev = c.iter().zip(values).map(|(c, v)| (v - a * c).abs()).fold(0.0, f64::max);
    (a, if a != 0.0 { dev / a.abs() } else { f64::INFINITY })
}

/// Two-color orientation as a function of the relative phase.
pub fn orient2c(cfg: &RunConfig) -> Run<Report> {
    let sec = cfg.section(&cfg.orient2c, "orient2c")?;
    let s = setup(cfg)?;
    let idx = cfg
        .pulses
        .iter()
        .position(|p| matches!(p, PulseSpec::TwoColor { .. }))
        .ok_or_else(|| ConfigError::new("pulses", "orient2c needs a two_color pulse"))?;
    let pulse_end = cfg.pulses[idx].support().map(|(_, b)| b).unwrap_or(cfg.dynamics.t_start);
    let phis = linspace(sec.phi_min, sec.phi_max, sec.points);
    let grid = grid(cfg)?;
    let probes = vec![
        Probe::new("cos_z", direction_cosine(&s.basis, SpaceAxis::Z)),
        Probe::new("cos2_z", cos_product(&s.basis, SpaceAxis::Z, SpaceAxis::Z)),
    ];
    let base = driven(&s, &cfg.pulses)?;
    let opts = options(cfg, spectral_bound(&base, &cfg.pulses, grid.start(), grid.end()));

    let runs: Vec<Run<Trajectory>> = Execution::Parallel.map(&phis, |&phi| {
        let mut pulses = cfg.pulses.clone();
        pulses[idx].set_parameter("phi", phi).map_err(at("pulses"))?;
        let ham = driven(&s, &pulses)?;
        evolve(cfg, &s, &ham, &grid, &probes, &opts)
    });
    let runs = runs.into_iter().collect::<Run<Vec<_>>>()?;

    let times = grid.times().to_vec();
    let post = times.partition_point(|&t| t < pulse_end);
    let mut table = Table::new("orient2c", &["phi", "cos_z_final", "cos_z_mean", "cos_z_peak", "cos2_z_final"]);
    let mut finals = Vec::new();
    let mut means = Vec::new();
    let mut peaks = Vec::new();
    for (phi, traj) in phis.iter().zip(&runs) {
        let cz = traj.series("cos_z").expect("probe recorded");
        let c2 = traj.series("cos2_z").expect("probe recorded");
        let fin = *cz.last().expect("non-empty");
        let mean = if post + 1 < times.len() { time_average(&times[post..], &cz[post..]) } else { fin };
        let peak = cz.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        table.push(vec![(*phi).into(), fin.into(), mean.into(), peak.into(), (*c2.last().expect("non-empty")).into()]);
        finals.push(fin);
        means.push(mean);
        peaks.push(peak);
    }

    let mut series = Table::new("orient2c_series", &["t_ps"]);
    series.columns.extend((0..phis.len()).map(|i| format!("cos_z_{i}")));
    for (i, &t) in times.iter().enumerate() {
        let mut row = vec![Cell::from(t)];
        row.extend(runs.iter().map(|r| Cell::from(r.values[i][0])));
        series.push(row);
    }

    let (amp_final, dev_final) = cosine_fit(&phis, &finals);
    let (amp_mean, dev_mean) = cosine_fit(&phis, &means);
    let argmax = finals
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if v.abs() > finals[best].abs() { i } else { best });
    let mut report = Report::default();
    common_summary(&mut report, cfg, &s);
    report.set("max_step", num(opts.max_step));
    report.set("max_norm_error", num(runs.iter().map(|r| r.max_norm_error).fold(0.0, f64::max)));
    report.set("phi", nums(&phis));
    report.set("cos_z_final", nums(&finals));
    report.set("cos_z_mean", nums(&means));
    report.set("cos_z_peak", nums(&peaks));
    report.set("cos_phi_amplitude_final", num(amp_final));
    report.set("cos_phi_deviation_final", num(dev_final));
    report.set("cos_phi_amplitude_mean", num(amp_mean));
    report.set("cos_phi_deviation_mean", num(dev_mean));
    report.set("argmax_abs_phi", num(phis[argmax]));
    report.set("post_pulse_time", num(pulse_end));
    report.plots.push(PlotSpec::new(
        "orient2c",
        "phi",
        &["cos_z_final", "cos_z_mean"],
        "Two-color orientation",
        "phi (rad)",
        "<cos>",
    ));
    let cols: Vec<&str> = series.columns[1..].iter().map(|s| s.as_str()).collect();
    report.plots.push(PlotSpec::new("orient2c_series", "t_ps", &cols, "Orientation vs time", "t (ps)", "<cos>"));
    report.tables.push(table);
    report.tables.push(series);
    Ok(report)
}

fn single_kick(time: f64, strength: f64) -> PulseSpec {
    PulseSpec::KickTrain {
        start: time,
        period: 1.0,
        count: 1,
        strength,
    }
}

/// Peak-to-peak variation of `v` over `lo <= t <= hi`.
pub fn window_span(times: &[f64], v: &[f64], lo: f64, hi: f64) -> f64 {
    let (mn, mx) = times
        .iter()
        .zip(v)
        .filter(|(t, _)| **t >= lo && **t <= hi)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, x)| (a.min(*x), b.max(*x)));
    if mx >= mn {
        mx - mn
    } else {
        0.0
    }
}

/// Two-kick echo against single-kick controls.
pub fn echo(cfg: &RunConfig) -> Run<Report> {
    let sec = cfg.section(&cfg.echo, "echo")?;
    let s = setup(cfg)?;
    let t1 = cfg.dynamics.t_start;
    let tau = sec.delay;
    let p2 = sec.second_strength.unwrap_or(sec.strength);
    let kicks = [
        vec![single_kick(t1, sec.strength), single_kick(t1 + tau, p2)],
        vec![single_kick(t1, sec.strength)],
        vec![single_kick(t1 + tau, p2)],
    ];
    let grid = grid(cfg)?;
    let c2 = cos_product(&s.basis, SpaceAxis::Z, SpaceAxis::Z);
    let probes = vec![Probe::new("cos2_z", c2.clone())];
    let baseline = s.initial.expectation(&c2).map_err(at("initial"))?;
    let runs: Vec<Run<Trajectory>> = Execution::Parallel.map(&kicks, |k| {
        let mut pulses = cfg.pulses.clone();
        pulses.extend(k.iter().cloned());
        let ham = driven(&s, &pulses)?;
        let opts = options(cfg, spectral_bound(&ham, &pulses, grid.start(), grid.end()));
        evolve(cfg, &s, &ham, &grid, &probes, &opts)
    });
    let runs = runs.into_iter().collect::<Run<Vec<_>>>()?;
    let [two, first, second] = [0, 1, 2].map(|i| runs[i].series("cos2_z").expect("probe recorded"));
    let diff = echo_difference(&two, &first, &second, baseline);
    let times = grid.times().to_vec();

    let (lo, hi) = (t1 + 1.8 * tau, t1 + 2.2 * tau);
    let feats = detect_features(&times, &diff, cfg.observables.min_prominence);
    let echo_feature = feats
        .iter()
        .filter(|f| f.time >= lo && f.time <= hi)
        .fold(None::<Feature>, |best, f| match best {
            Some(b) if b.prominence >= f.prominence => Some(b),
            _ => Some(*f),
        });
    let diff_span = window_span(&times, &diff, lo, hi);
    let control_span = window_span(&times, &first, lo, hi);

    let mut table = Table::new("echo", &["t_ps", "two_kick", "first_only", "second_only", "difference"]);
    for i in 0..times.len() {
        if i % cfg.observables.cadence == 0 || i + 1 == times.len() {
            table.push(vec![times[i].into(), two[i].into(), first[i].into(), second[i].into(), diff[i].into()]);
        }
    }
    let mut report = Report::default();
    common_summary(&mut report, cfg, &s);
    report.set("delay", num(tau));
    report.set("baseline", num(baseline));
    report.set("window", nums(&[lo, hi]));
    report.set(
        "echo_feature",
        echo_feature.map(|f| features_json(&[f])[0].clone()).unwrap_or(Value::Null),
    );
    report.set("echo_time", echo_feature.map(|f| num(f.time)).unwrap_or(Value::Null));
    report.set("difference_span", num(diff_span));
    report.set("control_span", num(control_span));
    report.set("amplitude_ratio", num(diff_span / control_span));
    report.set("peak_ratio", num(echo_ratio(&times, &diff, &first, baseline, lo, hi)));
    report.set("features", features_json(&feats));
    report.set("max_norm_error", num(runs.iter().map(|r| r.max_norm_error).fold(0.0, f64::max)));
    report.plots.push(PlotSpec::new(
        "echo",
        "t_ps",
        &["two_kick", "first_only", "second_only"],
        "Two-kick echo",
        "t (ps)",
        "<cos^2>",
    ));
    report.plots.push(PlotSpec::new("echo", "t_ps", &["difference"], "Echo signal", "t (ps)", "difference"));
    report.tables.push(table);
    Ok(report)
}

/// `⟨J²⟩` after each kick of a periodic train.
fn kick_train_j2(cfg: &RunConfig, s: &Setup, period: f64, kicks: u32, strength: f64) -> Run<(Vec<f64>, f64, f64)> {
    let t0 = cfg.dynamics.t_start;
    let pulses = vec![PulseSpec::KickTrain {
        start: t0,
        period,
        count: kicks,
        strength,
    }];
    let ham = driven(s, &pulses)?;
    let times: Vec<f64> = (0..kicks).map(|n| t0 + n as f64 * period).collect();
    let grid = TimeGrid::from_times(times).map_err(at("kicked"))?;
    let opts = options(cfg, ham.free_spectral_radius());
    let probes = vec![Probe::new("j2", rotkit::hamiltonian::angular_momentum_squared(&s.basis))];
    let traj = propagate(&s.initial, &ham, &grid, &probes, &opts).map_err(at("kicked"))?;
    Ok((traj.series("j2").expect("probe recorded"), opts.max_step, traj.max_norm_error))
}

/// Resonant and detuned periodic kick trains.
pub fn kicked(cfg: &RunConfig) -> Run<Report> {
    let sec = cfg.section(&cfg.kicked, "kicked")?;
    if cfg.basis.top != TopClass::Linear {
        return Err(ConfigError::new("basis.top", "kicked needs a linear rotor").into());
    }
    let s = setup(cfg)?;
    let t_rev = PI / s.spec.b;
    let n_res = sec.resonant_kicks.unwrap_or(sec.kicks);
    let jobs = [(t_rev, n_res), (sec.detuning * t_rev, sec.kicks)];
    let runs: Vec<Run<(Vec<f64>, f64, f64)>> =
        Execution::Parallel.map(&jobs, |&(period, n)| kick_train_j2(cfg, &s, period, n, sec.strength));
    let mut runs = runs.into_iter().collect::<Run<Vec<_>>>()?;
    let (detuned, step, err_detuned) = runs.pop().expect("two runs");
    let (resonant, _, err_resonant) = runs.pop().expect("two runs");

    let mut tables = Vec::new();
    for (name, period, vals) in [("kicked_resonant", t_rev, &resonant), ("kicked_detuned", jobs[1].0, &detuned)] {
        let mut t = Table::new(name, &["kick", "t_ps", "j2"]);
        for (n, v) in vals.iter().enumerate() {
            t.push(vec![(n + 1).into(), (cfg.dynamics.t_start + n as f64 * period).into(), (*v).into()]);
        }
        tables.push(t);
    }
    let compare = (n_res.min(sec.kicks) as usize).max(1);
    let tail = &detuned[compare - 1..];
    let (mn, mx) = tail.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));

    let mut report = Report::default();
    common_summary(&mut report, cfg, &s);
    report.set("max_step", num(step));
    report.set("max_norm_error", num(err_resonant.max(err_detuned)));
    report.set("revival_time", num(t_rev));
    report.set("resonant_period", num(t_rev));
    report.set("detuned_period", num(jobs[1].0));
    report.set("strength", num(sec.strength));
    report.set("compare_kick", compare);
    report.set("j2_resonant", num(resonant[compare - 1]));
    report.set("j2_detuned", num(detuned[compare - 1]));
    report.set("resonant_over_detuned", num(resonant[compare - 1] / detuned[compare - 1]));
    report.set("detuned_tail_max_over_min", num(mx / mn));
    report.set("j2_resonant_series", nums(&resonant));
    report.set("j2_detuned_series", nums(&detuned));
    report.plots.push(PlotSpec::new("kicked_resonant", "kick", &["j2"], "Resonant kicks", "kick", "<J^2>"));
    report.plots.push(PlotSpec::new("kicked_detuned", "kick", &["j2"], "Detuned kicks", "kick", "<J^2>"));
    report.tables.extend(tables);
    Ok(report)
}

fn motion_name(m: Motion) -> &'static str {
    match m {
        Motion::Rotating => "rotating",
        Motion::Oscillating => "oscillating",
        Motion::Separatrix => "separatrix",
        Motion::Forbidden => "forbidden",
    }
}

/// Classical energy-momentum diagram with the quantum levels overlaid.
pub fn emdiagram(cfg: &RunConfig) -> Run<Report> {
    let sec = cfg.section(&cfg.emdiagram, "emdiagram")?;
    let spec = cfg.spec();
    let inertia = match sec.inertia {
        Some([x, y, z]) => InertiaSpec::new(x, y, z).map_err(at("emdiagram.inertia"))?,
        None => InertiaSpec::from_constants(spec.a, spec.b, spec.c).map_err(at("rotor.constants"))?,
    };
    let j_max = cfg.basis.j_max;
    let j_values = sec
        .j_values
        .clone()
        .unwrap_or_else(|| (0..=j_max).map(|j| ((j * (j + 1)) as f64).sqrt()).collect());
    let rows = em_diagram(&inertia, &j_values).map_err(at("emdiagram.j_values"))?;
    let mut table = Table::new("emdiagram", &["j", "e_min", "e_sep", "e_max"]);
    for r in &rows {
        table.push(vec![r.j.into(), r.e_min.into(), r.e_sep.into(), r.e_max.into()]);
    }

    let (a, b, c) = (0.5 / inertia.ix, 0.5 / inertia.iy, 0.5 / inertia.iz);
    let qspec = if (a - c).abs() <= 1e-12 * c {
        RotorSpec::spherical(b)
    } else {
        RotorSpec::classified(a, b, c)
    };
    let qbasis = Arc::new(BasisSet::new(qspec.top, j_max));
    let h0 = free_hamiltonian(&qspec, &qbasis).map_err(at("emdiagram"))?;
    let mut quantum = Table::new("em_quantum", &["j", "j_magnitude", "energy", "motion"]);
    let mut outside = 0usize;
    for j in 0..=j_max {
        let idx: Vec<usize> = qbasis.shell(j).filter(|&i| qbasis.state_at(i).m == 0).collect();
        let (vals, _) = eigh(&h0.dense_block(&idx));
        let jm = ((j * (j + 1)) as f64).sqrt();
        for e in vals {
            let motion = classify(&inertia, e, jm);
            if motion == Motion::Forbidden {
                outside += 1;
            }
            quantum.push(vec![j.into(), jm.into(), e.into(), motion_name(motion).into()]);
        }
    }

    let mut report = Report::default();
    report.set("scenario", cfg.scenario.clone().map(Value::String).unwrap_or(Value::Null));
    report.set("inertia", nums(&[inertia.ix, inertia.iy, inertia.iz]));
    report.set("quantum_levels_outside_band", outside);
    report.set(
        "rows",
        Value::Array(
            rows.iter()
                .map(|r| json!({"j": num(r.j), "e_min": num(r.e_min), "e_sep": num(r.e_sep), "e_max": num(r.e_max)}))
                .collect(),
        ),
    );

    if let Some(tr) = &sec.trajectory {
        let jv = Vector3::from(tr.j_body);
        let jn = jv.norm();
        if jn == 0.0 {
            return Err(ConfigError::new("emdiagram.trajectory.j_body", "must be non-zero").into());
        }
        let span = tr.periods * inertia.characteristic_period(jn);
        let start = ClassicalState {
            j_body: tr.j_body,
            euler: tr.euler,
        };
        let traj = integrate_euler(&inertia, &start, span, tr.tolerance, tr.samples).map_err(at("emdiagram.trajectory"))?;
        let mut t = Table::new("em_trajectory", &["t_ps", "jx", "jy", "jz", "energy", "theta", "phi", "chi"]);
        for (time, st) in traj.times.iter().zip(&traj.states) {
            let e = inertia.energy(&Vector3::from(st.j_body));
            t.push(vec![
                (*time).into(),
                st.j_body[0].into(),
                st.j_body[1].into(),
                st.j_body[2].into(),
                e.into(),
                st.euler[0].into(),
                st.euler[1].into(),
                st.euler[2].into(),
            ]);
        }
        let (de, dn) = traj.conservation_errors(&inertia);
        let flips = tennis_racket_flips(&traj);
        let fp = flip_period(&flips);
        let motion = classify(&inertia, inertia.energy(&jv), jn);
        let ep = if motion == Motion::Oscillating || motion == Motion::Rotating {
            elliptic_period(&inertia, tr.j_body).ok()
        } else {
            None
        };
        report.set(
            "trajectory",
            json!({
                "span": num(span),
                "motion": motion_name(motion),
                "energy_drift": num(de),
                "momentum_drift": num(dn),
                "flips": flips.len(),
                "flip_times": nums(&flips),
                "flip_period": fp.map(num).unwrap_or(Value::Null),
                "elliptic_period": ep.map(num).unwrap_or(Value::Null),
                "steps": traj.steps,
            }),
        );
        report.plots.push(PlotSpec::new(
            "em_trajectory",
            "t_ps",
            &["jx", "jy", "jz"],
            "Body-frame angular momentum",
            "t (ps)",
            "J",
        ));
        report.tables.push(t);
    }
    report.plots.push(PlotSpec::new(
        "emdiagram",
        "j",
        &["e_min", "e_sep", "e_max"],
        "Energy-momentum diagram",
        "|J|",
        "energy (rad/ps)",
    ));
    report.plots.push(PlotSpec::new("em_quantum", "j_magnitude", &["energy"], "Quantum levels", "|J|", "energy (rad/ps)"));
    report.tables.insert(0, quantum);
    report.tables.insert(0, table);
    Ok(report)
}

pub fn observable(basis: &Arc<BasisSet>, name: &str) -> Option<Operator> {
    let axis = |c: char| match c {
        'x' => Some(SpaceAxis::X),
        'y' => Some(SpaceAxis::Y),
        'z' => Some(SpaceAxis::Z),
        _ => None,
    };
    if let Some(a) = name.strip_prefix("cos2_") {
        let ax = axis(a.chars().next()?)?;
        return Some(cos_product(basis, ax, ax));
    }
    let ax = axis(name.strip_prefix("cos_")?.chars().next()?)?;
    Some(direction_cosine(basis, ax))
}

/// Largest eigenvalue of `op` within the basis.
pub fn largest_eigenvalue(op: &Operator) -> f64 {
    BlockStructure::from_operators(op.dim(), &[op])
        .blocks()
        .iter()
        .map(|idx| eigh(&op.dense_block(idx)).0.last().copied().unwrap_or(f64::NEG_INFINITY))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Pulse-parameter optimization.
pub fn optimize(cfg: &RunConfig, seed: u64) -> Run<Report> {
    let sec = cfg.section(&cfg.optimize, "optimize")?;
    let s = setup(cfg)?;
    let (objective, op_name, bound, target_value) = match &sec.objective {
        ObjectiveSection::Final { observable: name, time } => {
            let op = observable(&s.basis, name).expect("validated observable");
            let bound = largest_eigenvalue(&op);
            (Objective::ExpectationAtTime { op, time: *time }, name, bound, None)
        }
        ObjectiveSection::Window { observable: name, start, end, samples } => {
            let op = observable(&s.basis, name).expect("validated observable");
            let bound = largest_eigenvalue(&op);
            (
                Objective::TimeWindowAverage {
                    op,
                    start: *start,
                    end: *end,
                    samples: *samples,
                },
                name,
                bound,
                None,
            )
        }
        ObjectiveSection::Target { observable: name, j_opt, m, time } => {
            let op = observable(&s.basis, name).expect("validated observable");
            let (target, value) = projected_target(&s.basis, &op, *j_opt, *m).map_err(at("optimize.objective"))?;
            (Objective::TargetFidelity { target, time: *time }, name, 1.0, Some(value))
        }
    };

    let horizon = match &sec.objective {
        ObjectiveSection::Final { time, .. } | ObjectiveSection::Target { time, .. } => *time,
        ObjectiveSection::Window { end, .. } => *end,
    };
    let mut step_bound: f64 = 0.0;
    for corner in [0, 1] {
        let mut pulses = cfg.pulses.clone();
        for p in &sec.parameters {
            let v = if corner == 0 { p.lower } else { p.upper };
            pulses[p.pulse].set_parameter(&p.name, v).map_err(at("optimize.parameters"))?;
        }
        let ham = driven(&s, &pulses)?;
        step_bound = step_bound.max(spectral_bound(&ham, &pulses, cfg.dynamics.t_start, horizon.max(cfg.dynamics.t_start + 1e-9)));
    }
    let problem = ControlProblem {
        spec: s.spec.clone(),
        initial: s.initial.clone(),
        pulses: cfg.pulses.clone(),
        parameters: sec.parameters.clone(),
        objective,
        penalty: sec.penalty,
        t_start: cfg.dynamics.t_start,
        options: options(cfg, step_bound),
    };
    problem.validate().map_err(at("optimize"))?;
    let result = run_optimizer(&problem, &sec.method, sec.budget, seed).map_err(at("optimize"))?;
    let best_eval = rotkit::control::evaluate(&problem, &result.best_params).map_err(at("optimize"))?;

    let names: Vec<String> = sec.parameters.iter().map(|p| format!("p{}_{}", p.pulse, p.name)).collect();
    let mut cols = vec!["evaluation", "value", "best"];
    cols.extend(names.iter().map(|s| s.as_str()));
    let mut table = Table::new("history", &cols);
    for h in &result.history {
        let mut row: Vec<Cell> = vec![h.index.into(), h.value.into(), h.best.into()];
        row.extend(h.params.iter().map(|&v| Cell::from(v)));
        table.push(row);
    }
    let monotone = result.history.windows(2).all(|w| w[1].best >= w[0].best);
    let max_value = result.history.iter().map(|h| h.value).fold(f64::NEG_INFINITY, f64::max);

    let mut report = Report::default();
    common_summary(&mut report, cfg, &s);
    report.set("observable", op_name.clone());
    report.set("max_step", num(problem.options.max_step));
    report.set("best_value", num(result.best_value));
    report.set("best_figure_of_merit", num(best_eval.figure_of_merit));
    report.set("best_fluence", num(best_eval.energy));
    report.set(
        "best_params",
        Value::Object(names.iter().cloned().zip(result.best_params.iter().map(|&v| num(v))).collect()),
    );
    report.set("evaluations", result.evaluations);
    report.set("budget_exhausted", result.budget_exhausted);
    report.set("best_monotone", monotone);
    report.set("variational_bound", num(bound));
    report.set("max_history_value", num(max_value));
    report.set("bound_respected", max_value <= bound + 1e-12);
    report.set("target_value", target_value.map(num).unwrap_or(Value::Null));
    report.plots.push(PlotSpec::new(
        "history",
        "evaluation",
        &["value", "best"],
        "Optimization history",
        "evaluation",
        "objective",
    ));
    report.tables.push(table);
    Ok(report)
}
