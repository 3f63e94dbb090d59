//! Run configuration.
//!
//! A run is described by one TOML file. Every table rejects unknown keys and
//! every physical value is checked for finiteness before any work starts;
//! failures are reported as [`ConfigError`] carrying the dotted key path.

use std::fmt;
use std::path::PathBuf;

use rotkit::basis::TopClass;
use rotkit::control::{FreeParameter, Method};
use rotkit::hamiltonian::{RotorSpec, SpinWeights};
use rotkit::pulses::PulseSpec;
use rotkit::units::EnergyUnit;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "`{}`: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub rotor: RotorSection,
    pub basis: BasisSection,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub pulses: Vec<PulseSpec>,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub observables: ObservablesSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub orient2c: Option<Orient2cSection>,
    #[serde(default)]
    pub echo: Option<EchoSection>,
    #[serde(default)]
    pub kicked: Option<KickedSection>,
    #[serde(default)]
    pub emdiagram: Option<EmSection>,
    #[serde(default)]
    pub optimize: Option<OptimizeSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotorSection {
    /// `[B]` for linear and spherical tops, `[A, C]` for symmetric tops,
    /// `[A, B, C]` for asymmetric tops.
    pub constants: Vec<f64>,
    #[serde(default)]
    pub units: EnergyUnit,
    #[serde(default)]
    pub mu0: f64,
    #[serde(default)]
    pub alpha_par: f64,
    #[serde(default)]
    pub alpha_perp: f64,
    #[serde(default)]
    pub beta_par: f64,
    #[serde(default)]
    pub beta_perp: f64,
    #[serde(default)]
    pub centrifugal_d: Option<f64>,
    #[serde(default)]
    pub spin_weights: Option<SpinWeights>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub top: TopClass,
    pub j_max: u32,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Pure {
        #[serde(default)]
        j: u32,
        #[serde(default)]
        k: i32,
        #[serde(default)]
        m: i32,
    },
    Thermal { temperature: f64 },
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Pure { j: 0, k: 0, m: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMethod {
    /// Vector propagation for pure states and ensembles, Lindblad when
    /// collapse operators are configured.
    #[default]
    Auto,
    Lvn,
    Lindblad,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    #[serde(default)]
    pub t_start: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_intervals")]
    pub intervals: usize,
    #[serde(default)]
    pub method: PropagationMethod,
    /// Internal step; chosen from the spectral bound when absent.
    #[serde(default)]
    pub max_step: Option<f64>,
    #[serde(default = "default_truncation")]
    pub truncation_limit: f64,
    #[serde(default = "default_watchdog")]
    pub watchdog_shells: u32,
    #[serde(default = "default_lindblad_tol")]
    pub lindblad_tolerance: f64,
    #[serde(default)]
    pub dephasing: Option<f64>,
    #[serde(default)]
    pub thermalizing: Option<ThermalizingSection>,
}

fn default_t_end() -> f64 {
    10.0
}
fn default_intervals() -> usize {
    1000
}
fn default_truncation() -> f64 {
    1e-6
}
fn default_watchdog() -> u32 {
    2
}
fn default_lindblad_tol() -> f64 {
    1e-9
}

impl Default for DynamicsSection {
    fn default() -> Self {
        Self {
            t_start: 0.0,
            t_end: default_t_end(),
            intervals: default_intervals(),
            method: PropagationMethod::Auto,
            max_step: None,
            truncation_limit: default_truncation(),
            watchdog_shells: default_watchdog(),
            lindblad_tolerance: default_lindblad_tol(),
            dephasing: None,
            thermalizing: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalizingSection {
    pub gamma: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservablesSection {
    /// Write every n-th output time to the time-series CSV.
    #[serde(default = "one")]
    pub cadence: usize,
    #[serde(default = "default_prominence")]
    pub min_prominence: f64,
    /// Also write the final state to `<prefix>_state.json`.
    #[serde(default)]
    pub save_state: bool,
}

fn one() -> usize {
    1
}
fn default_prominence() -> f64 {
    1e-3
}

impl Default for ObservablesSection {
    fn default() -> Self {
        Self {
            cadence: 1,
            min_prominence: default_prominence(),
            save_state: false,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub prefix: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Orient2cSection {
    #[serde(default)]
    pub phi_min: f64,
    #[serde(default = "pi")]
    pub phi_max: f64,
    #[serde(default = "default_phi_points")]
    pub points: usize,
}

fn pi() -> f64 {
    std::f64::consts::PI
}
fn default_phi_points() -> usize {
    9
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EchoSection {
    pub strength: f64,
    #[serde(default)]
    pub second_strength: Option<f64>,
    /// Delay between the kicks, ps.
    pub delay: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KickedSection {
    pub strength: f64,
    /// Kicks in the detuned run.
    pub kicks: u32,
    /// Kicks in the resonant run; defaults to `kicks`.
    #[serde(default)]
    pub resonant_kicks: Option<u32>,
    /// Detuned period in units of the revival time.
    #[serde(default = "default_detuning")]
    pub detuning: f64,
}

fn default_detuning() -> f64 {
    1.1847
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmSection {
    /// Principal moments `I_x >= I_y >= I_z`; derived from the rotor
    /// constants when absent.
    #[serde(default)]
    pub inertia: Option<[f64; 3]>,
    #[serde(default)]
    pub j_values: Option<Vec<f64>>,
    #[serde(default)]
    pub trajectory: Option<EmTrajectory>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmTrajectory {
    pub j_body: [f64; 3],
    #[serde(default = "default_euler")]
    pub euler: [f64; 3],
    /// Span in characteristic periods.
    #[serde(default = "default_periods")]
    pub periods: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_euler() -> [f64; 3] {
    [0.0; 3]
}
fn default_periods() -> f64 {
    20.0
}
fn default_samples() -> usize {
    2000
}
fn default_tolerance() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    pub parameters: Vec<FreeParameter>,
    pub objective: ObjectiveSection,
    #[serde(default = "default_method")]
    pub method: Method,
    pub budget: usize,
    #[serde(default)]
    pub penalty: f64,
}

fn default_method() -> Method {
    Method::simplex()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSection {
    /// `⟨observable⟩` at `time`.
    Final { observable: String, time: f64 },
    /// Mean of `⟨observable⟩` over `[start, end]`.
    Window {
        observable: String,
        start: f64,
        end: f64,
        #[serde(default = "default_window_samples")]
        samples: usize,
    },
    /// Overlap with the projected target of `observable` in `j <= j_opt`.
    Target {
        observable: String,
        j_opt: u32,
        #[serde(default)]
        m: i32,
        time: f64,
    },
}

fn default_window_samples() -> usize {
    50
}

pub const OBSERVABLES: [&str; 6] = ["cos_x", "cos_y", "cos_z", "cos2_x", "cos2_y", "cos2_z"];

/// Parse and validate a configuration.
pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg = parse_unchecked(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse without the value checks of [`RunConfig::validate`].
pub fn parse_unchecked(text: &str) -> Result<RunConfig, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::new("", e.to_string().trim_end().to_string()))?;
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner().to_string();
        ConfigError::new(if key == "." { String::new() } else { key }, inner.trim_end().to_string())
    })?;
    Ok(cfg)
}

fn finite(key: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(key, format!("must be finite, got {v}")))
    }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(key, format!("must be > 0, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(key, format!("must be >= 0, got {v}")))
    }
}

fn observable(key: &str, name: &str) -> Result<(), ConfigError> {
    if OBSERVABLES.contains(&name) {
        Ok(())
    } else {
        Err(ConfigError::new(key, format!("unknown observable `{name}`, expected one of {OBSERVABLES:?}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.rotor;
        let want = match self.basis.top {
            TopClass::Linear | TopClass::Spherical => 1,
            TopClass::ProlateSymmetric | TopClass::OblateSymmetric => 2,
            TopClass::Asymmetric => 3,
        };
        if r.constants.len() != want {
            return Err(ConfigError::new(
                "rotor.constants",
                format!("{:?} tops take {want} constant(s), got {}", self.basis.top, r.constants.len()),
            ));
        }
        for (i, &c) in r.constants.iter().enumerate() {
            positive(&format!("rotor.constants[{i}]"), c)?;
        }
        for (k, v) in [
            ("rotor.mu0", r.mu0),
            ("rotor.alpha_par", r.alpha_par),
            ("rotor.alpha_perp", r.alpha_perp),
            ("rotor.beta_par", r.beta_par),
            ("rotor.beta_perp", r.beta_perp),
        ] {
            finite(k, v)?;
        }
        if let Some(d) = r.centrifugal_d {
            non_negative("rotor.centrifugal_d", d)?;
        }
        if let Some(w) = r.spin_weights {
            non_negative("rotor.spin_weights.even", w.even)?;
            non_negative("rotor.spin_weights.odd", w.odd)?;
        }
        self.spec().validate().map_err(|e| ConfigError::new("rotor", e.to_string()))?;

        match self.initial {
            InitialState::Pure { j, k, m } => {
                if j > self.basis.j_max {
                    return Err(ConfigError::new("initial.j", format!("exceeds basis.j_max = {}", self.basis.j_max)));
                }
                let j = j as i32;
                if k.abs() > j || (self.basis.top.is_linear() && k != 0) {
                    return Err(ConfigError::new("initial.k", format!("invalid for j = {j}")));
                }
                if m.abs() > j {
                    return Err(ConfigError::new("initial.m", format!("invalid for j = {j}")));
                }
            }
            InitialState::Thermal { temperature } => non_negative("initial.temperature", temperature)?,
        }

        for (i, p) in self.pulses.iter().enumerate() {
            p.validate().map_err(|e| ConfigError::new(format!("pulses[{i}]"), e.to_string()))?;
        }

        let d = &self.dynamics;
        finite("dynamics.t_start", d.t_start)?;
        finite("dynamics.t_end", d.t_end)?;
        if d.t_end <= d.t_start {
            return Err(ConfigError::new("dynamics.t_end", "must exceed dynamics.t_start"));
        }
        if d.intervals == 0 {
            return Err(ConfigError::new("dynamics.intervals", "must be >= 1"));
        }
        if let Some(h) = d.max_step {
            positive("dynamics.max_step", h)?;
        }
        positive("dynamics.truncation_limit", d.truncation_limit)?;
        positive("dynamics.lindblad_tolerance", d.lindblad_tolerance)?;
        if let Some(g) = d.dephasing {
            non_negative("dynamics.dephasing", g)?;
        }
        if let Some(t) = &d.thermalizing {
            non_negative("dynamics.thermalizing.gamma", t.gamma)?;
            non_negative("dynamics.thermalizing.temperature", t.temperature)?;
        }

        if self.observables.cadence == 0 {
            return Err(ConfigError::new("observables.cadence", "must be >= 1"));
        }
        non_negative("observables.min_prominence", self.observables.min_prominence)?;

        if let Some(o) = &self.orient2c {
            finite("orient2c.phi_min", o.phi_min)?;
            finite("orient2c.phi_max", o.phi_max)?;
            if o.points < 2 {
                return Err(ConfigError::new("orient2c.points", "must be >= 2"));
            }
        }
        if let Some(e) = &self.echo {
            finite("echo.strength", e.strength)?;
            if let Some(s) = e.second_strength {
                finite("echo.second_strength", s)?;
            }
            positive("echo.delay", e.delay)?;
        }
        if let Some(k) = &self.kicked {
            finite("kicked.strength", k.strength)?;
            if k.kicks == 0 {
                return Err(ConfigError::new("kicked.kicks", "must be >= 1"));
            }
            if k.resonant_kicks == Some(0) {
                return Err(ConfigError::new("kicked.resonant_kicks", "must be >= 1"));
            }
            positive("kicked.detuning", k.detuning)?;
        }
        if let Some(em) = &self.emdiagram {
            if let Some(i) = em.inertia {
                for (n, v) in i.iter().enumerate() {
                    positive(&format!("emdiagram.inertia[{n}]"), *v)?;
                }
            }
            if let Some(js) = &em.j_values {
                for (n, v) in js.iter().enumerate() {
                    non_negative(&format!("emdiagram.j_values[{n}]"), *v)?;
                }
            }
            if let Some(t) = &em.trajectory {
                for (n, v) in t.j_body.iter().chain(&t.euler).enumerate() {
                    finite(&format!("emdiagram.trajectory[{n}]"), *v)?;
                }
                positive("emdiagram.trajectory.periods", t.periods)?;
                positive("emdiagram.trajectory.tolerance", t.tolerance)?;
                if t.samples == 0 {
                    return Err(ConfigError::new("emdiagram.trajectory.samples", "must be >= 1"));
                }
            }
        }
        if let Some(o) = &self.optimize {
            if o.parameters.is_empty() {
                return Err(ConfigError::new("optimize.parameters", "needs at least one entry"));
            }
            for (i, p) in o.parameters.iter().enumerate() {
                let key = format!("optimize.parameters[{i}]");
                let Some(pulse) = self.pulses.get(p.pulse) else {
                    return Err(ConfigError::new(format!("{key}.pulse"), format!("no pulse with index {}", p.pulse)));
                };
                if !pulse.parameter_names().contains(&p.name.as_str()) {
                    return Err(ConfigError::new(
                        format!("{key}.name"),
                        format!("`{}` is not one of {:?}", p.name, pulse.parameter_names()),
                    ));
                }
                finite(&format!("{key}.lower"), p.lower)?;
                finite(&format!("{key}.upper"), p.upper)?;
                if p.upper <= p.lower {
                    return Err(ConfigError::new(format!("{key}.upper"), "must exceed lower"));
                }
            }
            non_negative("optimize.penalty", o.penalty)?;
            if o.budget == 0 {
                return Err(ConfigError::new("optimize.budget", "must be >= 1"));
            }
            match &o.objective {
                ObjectiveSection::Final { observable: name, time } => {
                    observable("optimize.objective.observable", name)?;
                    finite("optimize.objective.time", *time)?;
                }
                ObjectiveSection::Window { observable: name, start, end, samples } => {
                    observable("optimize.objective.observable", name)?;
                    finite("optimize.objective.start", *start)?;
                    finite("optimize.objective.end", *end)?;
                    if end <= start {
                        return Err(ConfigError::new("optimize.objective.end", "must exceed start"));
                    }
                    if *samples == 0 {
                        return Err(ConfigError::new("optimize.objective.samples", "must be >= 1"));
                    }
                }
                ObjectiveSection::Target { observable: name, j_opt, time, .. } => {
                    observable("optimize.objective.observable", name)?;
                    finite("optimize.objective.time", *time)?;
                    if j_opt + 2 > self.basis.j_max {
                        return Err(ConfigError::new("optimize.objective.j_opt", "needs j_opt + 2 <= basis.j_max"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Rotor parameters with constants converted to rad/ps.
    pub fn spec(&self) -> RotorSpec {
        let r = &self.rotor;
        let c: Vec<f64> = r.constants.iter().map(|&v| r.units.to_rad_per_ps(v)).collect();
        let mut spec = match (self.basis.top, c.as_slice()) {
            (TopClass::Linear, [b]) => RotorSpec::linear(*b),
            (TopClass::Spherical, [b]) => RotorSpec::spherical(*b),
            (TopClass::ProlateSymmetric, [a, c]) => RotorSpec::prolate(*a, *c),
            (TopClass::OblateSymmetric, [a, c]) => RotorSpec::oblate(*a, *c),
            (_, [a, b, c]) => RotorSpec::asymmetric(*a, *b, *c),
            _ => RotorSpec::linear(f64::NAN),
        };
        spec = spec
            .with_dipole(r.mu0)
            .with_polarizability(r.alpha_par, r.alpha_perp)
            .with_hyperpolarizability(r.beta_par, r.beta_perp);
        if let Some(w) = r.spin_weights {
            spec = spec.with_spin_weights(w.even, w.odd);
        }
        if let Some(d) = r.centrifugal_d {
            spec = spec.with_centrifugal(d);
        }
        spec
    }

    pub fn section<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T, ConfigError> {
        value
            .as_ref()
            .ok_or_else(|| ConfigError::new(name, format!("section `[{name}]` is required for this subcommand")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[rotor]\nconstants = [1.0]\n[basis]\ntop = \"linear\"\nj_max = 4\n";

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.initial, InitialState::Pure { j: 0, k: 0, m: 0 });
        assert_eq!(cfg.dynamics.intervals, 1000);
        assert_eq!(cfg.spec().b, 1.0);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse(&format!("{MINIMAL}[dynamics]\nt_ends = 3.0\n")).unwrap_err();
        assert!(err.message.contains("t_ends"), "{err}");
        let err = parse(&MINIMAL.replace("j_max = 4", "j_max = 4\nfoo = 1")).unwrap_err();
        assert!(err.to_string().contains("foo"), "{err}");
    }

    #[test]
    fn nested_type_errors_carry_the_path() {
        let err = parse(&format!("{MINIMAL}[initial]\nkind = \"thermal\"\ntemperature = \"hot\"\n")).unwrap_err();
        assert!(err.key.starts_with("initial"), "{err}");
        assert!(err.message.contains("line 6"), "{err}");
        let err = parse(&format!("{MINIMAL}[dynamics]\nintervals = -3\n")).unwrap_err();
        assert_eq!(err.key, "dynamics.intervals", "{err}");
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let err = parse(&MINIMAL.replace("[1.0]", "[nan]")).unwrap_err();
        assert_eq!(err.key, "rotor.constants[0]");
        let err = parse(&format!("{MINIMAL}[dynamics]\nt_end = inf\n")).unwrap_err();
        assert_eq!(err.key, "dynamics.t_end");
    }

    #[test]
    fn constants_must_match_top_class() {
        let err = parse(&MINIMAL.replace("[1.0]", "[1.0, 2.0]")).unwrap_err();
        assert_eq!(err.key, "rotor.constants");
    }

    #[test]
    fn optimize_parameters_must_exist() {
        let text = format!(
            "{MINIMAL}[[pulses]]\nkind = \"kick_train\"\nperiod = 1.0\ncount = 1\nstrength = 1.0\n\
             [optimize]\nbudget = 5\nparameters = [{{ pulse = 0, name = \"fwhm\", lower = 0.0, upper = 1.0 }}]\n\
             objective = {{ kind = \"final\", observable = \"cos2_z\", time = 1.0 }}\n"
        );
        let err = parse(&text).unwrap_err();
        assert_eq!(err.key, "optimize.parameters[0].name", "{err}");
    }
}
