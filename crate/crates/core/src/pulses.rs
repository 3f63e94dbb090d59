//! Time-dependent field descriptions and the sudden-limit kick propagator.
//!
//! Envelopes are field amplitudes `ℰ(t)`; the interaction coefficients they
//! produce are described in [`crate::hamiltonian`]. A Gaussian envelope has
//! intensity `ℰ²` with full width at half maximum `fwhm` and is truncated at
//! `±5 fwhm`, where `ℰ/ℰ_peak < 1e-15`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{Result, RotorError};
use crate::hamiltonian::{
    averaged_coefficients, cos_product, resonant_coefficients, two_color_coefficients, Channel,
    Coefficients, RotorSpec, SpaceAxis,
};
use crate::linalg::{eigh, spectral_map};
use crate::operator::{BlockStructure, BlockUnitary, Operator};

type C = Complex64;

/// Gaussian support half-width in units of the fwhm.
pub const GAUSSIAN_CUTOFF: f64 = 5.0;

const LN2: f64 = std::f64::consts::LN_2;

/// How a carrier-frequency field couples to the rotor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    /// Non-resonant: the interaction is averaged over the optical cycle.
    #[default]
    Averaged,
    /// Instantaneous field `ℰ(t) cos(ω(t - t₀) + φ)`, no averaging.
    Resonant,
}

fn z_axis() -> SpaceAxis {
    SpaceAxis::Z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PulseSpec {
    GaussianEnvelope {
        center: f64,
        fwhm: f64,
        /// Peak envelope per space axis `(X, Y, Z)`.
        peak: [f64; 3],
        #[serde(default)]
        phases: [f64; 3],
        #[serde(default)]
        mode: FieldMode,
        /// Carrier angular frequency for [`FieldMode::Resonant`], rad/ps.
        #[serde(default)]
        carrier: f64,
    },
    /// `count` impulsive kicks `exp(iP cos²θ)` at `start + n·period`.
    KickTrain {
        #[serde(default)]
        start: f64,
        period: f64,
        count: u32,
        strength: f64,
    },
    /// Z-polarised ω + 2ω pair sharing one Gaussian envelope.
    TwoColor {
        center: f64,
        fwhm: f64,
        e1: f64,
        e2: f64,
        phi: f64,
    },
    /// Sine-squared field lobe of length `duration`. With `zero_area` it is
    /// followed by a lobe of amplitude `-A/4` lasting `4·duration`.
    HalfCycleThz {
        #[serde(default)]
        start: f64,
        amplitude: f64,
        duration: f64,
        #[serde(default)]
        zero_area: bool,
        #[serde(default = "z_axis")]
        axis: SpaceAxis,
    },
    /// Trapezoidal non-resonant envelope along one axis.
    Ramp {
        #[serde(default)]
        start: f64,
        rise: f64,
        hold: f64,
        fall: f64,
        strength: f64,
        #[serde(default = "z_axis")]
        axis: SpaceAxis,
    },
}

/// Field state at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldSample {
    Off,
    Averaged { envelopes: [f64; 3], phases: [f64; 3] },
    Resonant { field: [f64; 3] },
    TwoColor { e1: f64, e2: f64, phi: f64 },
}

impl FieldSample {
    pub fn coefficients(&self, spec: &RotorSpec) -> Coefficients {
        match *self {
            FieldSample::Off => Coefficients::default(),
            FieldSample::Averaged { envelopes, phases } => averaged_coefficients(spec, envelopes, phases),
            FieldSample::Resonant { field } => resonant_coefficients(spec, field),
            FieldSample::TwoColor { e1, e2, phi } => two_color_coefficients(spec, e1, e2, phi),
        }
    }
}

/// Normalised Gaussian envelope, zero beyond the cutoff.
fn gaussian(t: f64, center: f64, fwhm: f64) -> f64 {
    let x = t - center;
    if x.abs() > GAUSSIAN_CUTOFF * fwhm {
        return 0.0;
    }
    (-2.0 * LN2 * x * x / (fwhm * fwhm)).exp()
}

/// `∫ g² dt` of the normalised Gaussian envelope.
fn gaussian_intensity_integral(fwhm: f64) -> f64 {
    fwhm * (PI / (4.0 * LN2)).sqrt()
}

fn axis_vector(axis: SpaceAxis, v: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    out[axis.index()] = v;
    out
}

fn sin2(x: f64) -> f64 {
    let s = x.sin();
    s * s
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(RotorError::InvalidInput(format!("{name} must be finite, got {v}")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    finite(name, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(RotorError::InvalidInput(format!("{name} must be > 0, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    finite(name, v)?;
    if v >= 0.0 {
        Ok(())
    } else {
        Err(RotorError::InvalidInput(format!("{name} must be >= 0, got {v}")))
    }
}

impl PulseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PulseSpec::GaussianEnvelope { center, fwhm, peak, phases, carrier, .. } => {
                finite("center", center)?;
                positive("fwhm", fwhm)?;
                for v in peak {
                    non_negative("peak", v)?;
                }
                for v in phases {
                    finite("phases", v)?;
                }
                finite("carrier", carrier)
            }
            PulseSpec::KickTrain { start, period, strength, .. } => {
                finite("start", start)?;
                positive("period", period)?;
                finite("strength", strength)
            }
            PulseSpec::TwoColor { center, fwhm, e1, e2, phi } => {
                finite("center", center)?;
                positive("fwhm", fwhm)?;
                non_negative("e1", e1)?;
                non_negative("e2", e2)?;
                finite("phi", phi)
            }
            PulseSpec::HalfCycleThz { start, amplitude, duration, .. } => {
                finite("start", start)?;
                finite("amplitude", amplitude)?;
                positive("duration", duration)
            }
            PulseSpec::Ramp { start, rise, hold, fall, strength, .. } => {
                finite("start", start)?;
                non_negative("rise", rise)?;
                non_negative("hold", hold)?;
                non_negative("fall", fall)?;
                positive("rise + hold + fall", rise + hold + fall)?;
                non_negative("strength", strength)
            }
        }
    }

    /// Field at time `t`; zero outside the pulse support. Kick trains are
    /// impulsive and sample as [`FieldSample::Off`].
    pub fn sample(&self, t: f64) -> FieldSample {
        match *self {
            PulseSpec::GaussianEnvelope { center, fwhm, peak, phases, mode, carrier } => {
                let g = gaussian(t, center, fwhm);
                if g == 0.0 {
                    return FieldSample::Off;
                }
                match mode {
                    FieldMode::Averaged => FieldSample::Averaged {
                        envelopes: peak.map(|p| p * g),
                        phases,
                    },
                    FieldMode::Resonant => {
                        let mut field = [0.0; 3];
                        for k in 0..3 {
                            field[k] = peak[k] * g * (carrier * (t - center) + phases[k]).cos();
                        }
                        FieldSample::Resonant { field }
                    }
                }
            }
            PulseSpec::KickTrain { .. } => FieldSample::Off,
            PulseSpec::TwoColor { center, fwhm, e1, e2, phi } => {
                let g = gaussian(t, center, fwhm);
                if g == 0.0 {
                    return FieldSample::Off;
                }
                FieldSample::TwoColor { e1: e1 * g, e2: e2 * g, phi }
            }
            PulseSpec::HalfCycleThz { start, amplitude, duration, zero_area, axis } => {
                let x = t - start;
                let v = if (0.0..=duration).contains(&x) {
                    amplitude * sin2(PI * x / duration)
                } else if zero_area && x > duration && x <= 5.0 * duration {
                    -0.25 * amplitude * sin2(PI * (x - duration) / (4.0 * duration))
                } else {
                    return FieldSample::Off;
                };
                FieldSample::Resonant { field: axis_vector(axis, v) }
            }
            PulseSpec::Ramp { start, rise, hold, fall, strength, axis } => {
                let x = t - start;
                let f = if x < 0.0 || x > rise + hold + fall {
                    return FieldSample::Off;
                } else if x < rise {
                    x / rise
                } else if x <= rise + hold {
                    1.0
                } else {
                    (rise + hold + fall - x) / fall
                };
                FieldSample::Averaged {
                    envelopes: axis_vector(axis, strength * f),
                    phases: [0.0; 3],
                }
            }
        }
    }

    /// Time interval outside of which [`PulseSpec::sample`] is `Off`.
    pub fn support(&self) -> Option<(f64, f64)> {
        match *self {
            PulseSpec::GaussianEnvelope { center, fwhm, .. } | PulseSpec::TwoColor { center, fwhm, .. } => {
                Some((center - GAUSSIAN_CUTOFF * fwhm, center + GAUSSIAN_CUTOFF * fwhm))
            }
            PulseSpec::KickTrain { .. } => None,
            PulseSpec::HalfCycleThz { start, duration, zero_area, .. } => {
                Some((start, start + if zero_area { 5.0 * duration } else { duration }))
            }
            PulseSpec::Ramp { start, rise, hold, fall, .. } => Some((start, start + rise + hold + fall)),
        }
    }

    /// Impulsive kicks as `(time, P)`.
    pub fn kick_events(&self) -> Vec<(f64, f64)> {
        match *self {
            PulseSpec::KickTrain { start, period, count, strength } => {
                (0..count).map(|n| (start + n as f64 * period, strength)).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Interaction channels this pulse can drive for the given rotor.
    pub fn channels(&self, spec: &RotorSpec) -> Vec<Channel> {
        let mut out = Vec::new();
        let mut push = |c: Channel| {
            if !out.contains(&c) {
                out.push(c);
            }
        };
        let axes_of = |v: [f64; 3]| SpaceAxis::ALL.into_iter().filter(move |k| v[k.index()] != 0.0);
        match *self {
            PulseSpec::GaussianEnvelope { peak, mode, .. } => {
                let axes: Vec<SpaceAxis> = axes_of(peak).collect();
                for &a in &axes {
                    if mode == FieldMode::Resonant {
                        push(Channel::Cos(a));
                    }
                    for &b in &axes {
                        push(Channel::product(a, b));
                    }
                }
                push(Channel::Identity);
            }
            PulseSpec::KickTrain { .. } => {}
            PulseSpec::TwoColor { .. } => {
                push(Channel::product(SpaceAxis::Z, SpaceAxis::Z));
                push(Channel::CosCubed);
                push(Channel::Cos(SpaceAxis::Z));
                push(Channel::Identity);
            }
            PulseSpec::HalfCycleThz { axis, .. } => {
                push(Channel::Cos(axis));
                push(Channel::product(axis, axis));
                push(Channel::Identity);
            }
            PulseSpec::Ramp { axis, .. } => {
                push(Channel::product(axis, axis));
                push(Channel::Identity);
            }
        }
        if !spec.keep_isotropic {
            out.retain(|c| *c != Channel::Identity);
        }
        out
    }

    /// `∫ Σ_K ℰ_K(t)² dt` (for resonant pulses the squared instantaneous
    /// field, for kicks `4P/|Δα|` per kick, or `P` when `Δα = 0`).
    pub fn fluence(&self, delta_alpha: f64) -> f64 {
        match *self {
            PulseSpec::GaussianEnvelope { fwhm, peak, phases, mode, carrier, .. } => {
                let g = gaussian_intensity_integral(fwhm);
                match mode {
                    FieldMode::Averaged => peak.iter().map(|p| p * p).sum::<f64>() * g,
                    FieldMode::Resonant => {
                        // ∫ g² cos²(ωx + φ) dx = ½ G [1 + cos 2φ · exp(-ω² fwhm² / 4ln2)]
                        let osc = (-(carrier * fwhm).powi(2) / (4.0 * LN2)).exp();
                        peak.iter()
                            .zip(phases)
                            .map(|(p, ph)| 0.5 * p * p * (1.0 + osc * (2.0 * ph).cos()))
                            .sum::<f64>()
                            * g
                    }
                }
            }
            PulseSpec::KickTrain { count, strength, .. } => {
                let per = if delta_alpha == 0.0 {
                    strength.abs()
                } else {
                    4.0 * strength.abs() / delta_alpha.abs()
                };
                per * count as f64
            }
            PulseSpec::TwoColor { fwhm, e1, e2, .. } => (e1 * e1 + e2 * e2) * gaussian_intensity_integral(fwhm),
            PulseSpec::HalfCycleThz { amplitude, duration, zero_area, .. } => {
                let main = amplitude * amplitude * 3.0 * duration / 8.0;
                if zero_area {
                    main + amplitude * amplitude * 3.0 * duration / 32.0
                } else {
                    main
                }
            }
            PulseSpec::Ramp { rise, hold, fall, strength, .. } => {
                strength * strength * (rise / 3.0 + hold + fall / 3.0)
            }
        }
    }

    /// Names accepted by [`PulseSpec::parameter`] and
    /// [`PulseSpec::set_parameter`].
    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self {
            PulseSpec::GaussianEnvelope { .. } => &[
                "center", "fwhm", "peak_x", "peak_y", "peak_z", "phase_x", "phase_y", "phase_z", "carrier",
            ],
            PulseSpec::KickTrain { .. } => &["start", "period", "strength"],
            PulseSpec::TwoColor { .. } => &["center", "fwhm", "e1", "e2", "phi"],
            PulseSpec::HalfCycleThz { .. } => &["start", "amplitude", "duration"],
            PulseSpec::Ramp { .. } => &["start", "rise", "hold", "fall", "strength"],
        }
    }

    fn slot(&mut self, name: &str) -> Option<&mut f64> {
        match self {
            PulseSpec::GaussianEnvelope { center, fwhm, peak, phases, carrier, .. } => match name {
                "center" => Some(center),
                "fwhm" => Some(fwhm),
                "peak_x" => Some(&mut peak[0]),
                "peak_y" => Some(&mut peak[1]),
                "peak_z" => Some(&mut peak[2]),
                "phase_x" => Some(&mut phases[0]),
                "phase_y" => Some(&mut phases[1]),
                "phase_z" => Some(&mut phases[2]),
                "carrier" => Some(carrier),
                _ => None,
            },
            PulseSpec::KickTrain { start, period, strength, .. } => match name {
                "start" => Some(start),
                "period" => Some(period),
                "strength" => Some(strength),
                _ => None,
            },
            PulseSpec::TwoColor { center, fwhm, e1, e2, phi } => match name {
                "center" => Some(center),
                "fwhm" => Some(fwhm),
                "e1" => Some(e1),
                "e2" => Some(e2),
                "phi" => Some(phi),
                _ => None,
            },
            PulseSpec::HalfCycleThz { start, amplitude, duration, .. } => match name {
                "start" => Some(start),
                "amplitude" => Some(amplitude),
                "duration" => Some(duration),
                _ => None,
            },
            PulseSpec::Ramp { start, rise, hold, fall, strength, .. } => match name {
                "start" => Some(start),
                "rise" => Some(rise),
                "hold" => Some(hold),
                "fall" => Some(fall),
                "strength" => Some(strength),
                _ => None,
            },
        }
    }

    pub fn parameter(&self, name: &str) -> Result<f64> {
        self.clone()
            .slot(name)
            .map(|v| *v)
            .ok_or_else(|| RotorError::InvalidInput(format!("pulse has no parameter `{name}`")))
    }

    pub fn set_parameter(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = self
            .slot(name)
            .ok_or_else(|| RotorError::InvalidInput(format!("pulse has no parameter `{name}`")))?;
        *slot = value;
        Ok(())
    }

    /// `∫ E(t) dt` along each axis for resonant field shapes.
    pub fn field_area(&self) -> [f64; 3] {
        match *self {
            PulseSpec::HalfCycleThz { amplitude, duration, zero_area, axis, .. } => {
                let main = 0.5 * amplitude * duration;
                let tail = if zero_area { -0.5 * amplitude * duration } else { 0.0 };
                axis_vector(axis, main + tail)
            }
            _ => [0.0; 3],
        }
    }
}

/// Dimensionless kick strength `P = (Δα/4) ∫ Σ_K ℰ_K² dt` of a non-resonant
/// envelope, the sudden limit of the cycle-averaged interaction.
pub fn kick_strength(pulse: &PulseSpec, spec: &RotorSpec) -> Result<f64> {
    pulse.validate()?;
    let da = spec.delta_alpha();
    match pulse {
        PulseSpec::GaussianEnvelope { mode: FieldMode::Averaged, .. } | PulseSpec::Ramp { .. } => {
            Ok(0.25 * da * pulse.fluence(da))
        }
        PulseSpec::KickTrain { strength, .. } => Ok(*strength),
        _ => Err(RotorError::InvalidInput(
            "kick strength is defined for non-resonant envelopes".into(),
        )),
    }
}

/// Per-block eigen-decomposition of `cos²θ_{zZ}`, reusable for kicks of any
/// strength.
#[derive(Debug, Clone)]
pub struct KickGenerator {
    dim: usize,
    blocks: Vec<(Vec<usize>, Vec<f64>, nalgebra::DMatrix<C>)>,
}

impl KickGenerator {
    pub fn new(basis: &Arc<BasisSet>, blocks: &BlockStructure) -> Self {
        let c2 = cos_product(basis, SpaceAxis::Z, SpaceAxis::Z);
        Self::from_operator(&c2, blocks)
    }

    pub fn from_operator(c2: &Operator, blocks: &BlockStructure) -> Self {
        let blocks = blocks
            .blocks()
            .iter()
            .map(|idx| {
                let (vals, vecs) = eigh(&c2.dense_block(idx));
                (idx.clone(), vals, vecs)
            })
            .collect();
        Self { dim: c2.dim(), blocks }
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// `exp(iP cos²θ)` on block `b`.
    pub fn block_unitary(&self, p: f64, b: usize) -> nalgebra::DMatrix<C> {
        let (_, vals, vecs) = &self.blocks[b];
        spectral_map(vals, vecs, |l| C::from_polar(1.0, p * l))
    }

    /// `exp(iP cos²θ)` restricted to the blocks in `which` (all when `None`).
    pub fn unitary(&self, p: f64, which: Option<&[usize]>) -> BlockUnitary {
        let pick: Vec<usize> = match which {
            Some(w) => w.to_vec(),
            None => (0..self.blocks.len()).collect(),
        };
        let blocks = pick
            .into_iter()
            .map(|b| (self.blocks[b].0.clone(), self.block_unitary(p, b)))
            .collect();
        BlockUnitary::new(self.dim, blocks)
    }
}

/// Sudden-limit propagator `exp(iP cos²θ_{zZ})`, block-diagonal over the
/// invariant subspaces of `cos²θ_{zZ}`.
pub fn sudden_propagator(basis: &Arc<BasisSet>, p: f64) -> Result<BlockUnitary> {
    if !p.is_finite() {
        return Err(RotorError::InvalidInput(format!("kick strength must be finite, got {p}")));
    }
    let c2 = cos_product(basis, SpaceAxis::Z, SpaceAxis::Z);
    let blocks = BlockStructure::from_operators(basis.dim(), &[&c2]);
    Ok(KickGenerator::from_operator(&c2, &blocks).unitary(p, None))
}

/// Kick events of a pulse list, sorted by time. Kicks at equal times keep
/// their list order.
pub fn kick_schedule(pulses: &[PulseSpec]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = pulses.iter().flat_map(|p| p.kick_events()).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{RotorState, TopClass};

    fn gauss(peak: f64) -> PulseSpec {
        PulseSpec::GaussianEnvelope {
            center: 1.0,
            fwhm: 0.1,
            peak: [0.0, 0.0, peak],
            phases: [0.0; 3],
            mode: FieldMode::Averaged,
            carrier: 0.0,
        }
    }

    fn envelope_z(s: FieldSample) -> f64 {
        match s {
            FieldSample::Averaged { envelopes, .. } => envelopes[2],
            FieldSample::Off => 0.0,
            other => panic!("unexpected {other:?}"),
        }
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn gaussian_peak_and_tail() {
        let p = gauss(3.0);
        assert_eq!(envelope_z(p.sample(1.0)), 3.0);
        assert!(envelope_z(p.sample(1.0 + 5.0 * 0.1)) < 1e-15 * 3.0);
        assert!(envelope_z(p.sample(1.0 - 5.0 * 0.1)) < 1e-15 * 3.0);
        assert_eq!(p.sample(1.0 + 0.51), FieldSample::Off);
        // intensity halves at ±fwhm/2
        let half = envelope_z(p.sample(1.05));
        assert!((half * half / 9.0 - 0.5).abs() < 1e-14);
        assert_eq!(p.sample(0.97), p.sample(0.97));
    }

    #[test]
    fn kick_strength_closed_forms() {
        let spec = RotorSpec::linear(1.0).with_polarizability(3.0, 1.0);
        assert_eq!(kick_strength(&gauss(0.0), &spec).unwrap(), 0.0);
        let p1 = kick_strength(&gauss(1.0), &spec).unwrap();
        let p2 = kick_strength(&gauss(2f64.sqrt()), &spec).unwrap();
        assert!((p2 / p1 - 2.0).abs() < 1e-14);
        let numeric = 0.25 * 2.0 * simpson(|t| envelope_z(gauss(1.0).sample(t)).powi(2), 0.4, 1.6, 4000);
        assert!((numeric - p1).abs() < 1e-12 * p1);
        let (h, w) = (2.5f64, 0.3);
        let rect = PulseSpec::Ramp {
            start: 0.0,
            rise: 0.0,
            hold: w,
            fall: 0.0,
            strength: h.sqrt(),
            axis: SpaceAxis::Z,
        };
        assert!((kick_strength(&rect, &spec).unwrap() - 2.0 * h * w / 4.0).abs() < 1e-14);
    }

    #[test]
    fn ramp_fluence_matches_quadrature() {
        let r = PulseSpec::Ramp {
            start: 0.2,
            rise: 0.3,
            hold: 0.5,
            fall: 0.2,
            strength: 1.5,
            axis: SpaceAxis::X,
        };
        let f = |t: f64| match r.sample(t) {
            FieldSample::Averaged { envelopes, .. } => envelopes[0].powi(2),
            _ => 0.0,
        };
        let numeric = simpson(f, 0.2, 0.5, 600) + simpson(f, 0.5, 1.0, 600) + simpson(f, 1.0, 1.2, 600);
        assert!((numeric - r.fluence(1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_area_half_cycle() {
        let (a, d) = (4.0, 0.7);
        let p = PulseSpec::HalfCycleThz {
            start: 0.1,
            amplitude: a,
            duration: d,
            zero_area: true,
            axis: SpaceAxis::Z,
        };
        let e = |t: f64| match p.sample(t) {
            FieldSample::Resonant { field } => field[2],
            _ => 0.0,
        };
        let area = simpson(e, 0.1, 0.1 + d, 2000) + simpson(e, 0.1 + d, 0.1 + 5.0 * d, 2000);
        assert!(area.abs() < 1e-10 * a * d, "{area}");
        assert_eq!(p.field_area()[2], 0.0);
        let e2 = |t: f64| e(t) * e(t);
        let fl = simpson(e2, 0.1, 0.1 + d, 2000) + simpson(e2, 0.1 + d, 0.1 + 5.0 * d, 2000);
        assert!((fl - p.fluence(1.0)).abs() < 1e-10);
    }

    #[test]
    fn validation() {
        assert!(gauss(1.0).validate().is_ok());
        let bad = PulseSpec::KickTrain {
            start: 0.0,
            period: 0.0,
            count: 3,
            strength: 1.0,
        };
        assert!(bad.validate().is_err());
        let nan = PulseSpec::TwoColor {
            center: 0.0,
            fwhm: 1.0,
            e1: f64::NAN,
            e2: 0.0,
            phi: 0.0,
        };
        assert!(nan.validate().is_err());
    }

    #[test]
    fn kick_train_events() {
        let k = PulseSpec::KickTrain {
            start: 0.5,
            period: 2.0,
            count: 3,
            strength: 0.7,
        };
        assert_eq!(k.kick_events(), vec![(0.5, 0.7), (2.5, 0.7), (4.5, 0.7)]);
        assert_eq!(k.sample(0.5), FieldSample::Off);
    }

    #[test]
    fn sudden_propagator_identity_and_unitarity() {
        let b = Arc::new(BasisSet::new(TopClass::Linear, 8));
        let u0 = sudden_propagator(&b, 0.0).unwrap();
        let d = u0.to_dense();
        for r in 0..b.dim() {
            for c in 0..b.dim() {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((d[(r, c)] - C::new(want, 0.0)).norm() < 1e-14);
            }
        }
        assert!(sudden_propagator(&b, 3.0).unwrap().unitarity_error() < 1e-12);
    }

    #[test]
    fn weak_kick_population() {
        let b = Arc::new(BasisSet::new(TopClass::Linear, 10));
        let u = sudden_propagator(&b, 0.01).unwrap();
        let mut psi = vec![C::new(0.0, 0.0); b.dim()];
        psi[0] = C::new(1.0, 0.0);
        u.apply(&mut psi);
        let pop = psi[b.index_of(RotorState::new(2, 0, 0)).unwrap()].norm_sqr();
        let first_order = (0.01 * 2.0 / (3.0 * 5f64.sqrt())).powi(2);
        assert!((pop / first_order - 1.0).abs() < 1e-2, "{pop}");
        assert!((first_order - 8.889e-6).abs() < 1e-9);
    }

    #[test]
    fn serde_round_trip() {
        let p = PulseSpec::HalfCycleThz {
            start: 0.0,
            amplitude: 1.0,
            duration: 0.5,
            zero_area: true,
            axis: SpaceAxis::X,
        };
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"kind\":\"half_cycle_thz\""));
        assert_eq!(serde_json::from_str::<PulseSpec>(&s).unwrap(), p);
        let unknown = r#"{"kind":"kick_train","period":1.0,"count":2,"strength":1.0,"bogus":1}"#;
        assert!(serde_json::from_str::<PulseSpec>(unknown).is_err());
    }
}
