use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rotkit::basis::{BasisSet, RotorState, TopClass};
use rotkit::hamiltonian::{cos_cubed, cos_product, direction_cosine, SpaceAxis};
use rotkit::operator::Operator;
use rotkit::wigner::{wigner_small_d, EulerQuadrature};

type C = Complex64;

/// Separable function `f(φ) g(θ)` of the Euler angles.
#[derive(Clone, Copy)]
struct Sep {
    phi: fn(f64) -> f64,
    theta: fn(f64) -> f64,
}

fn axis_fn(axis: SpaceAxis) -> Sep {
    match axis {
        SpaceAxis::X => Sep { phi: f64::cos, theta: f64::sin },
        SpaceAxis::Y => Sep { phi: f64::sin, theta: f64::sin },
        SpaceAxis::Z => Sep { phi: |_| 1.0, theta: f64::cos },
    }
}

fn quad_element(q: &EulerQuadrature, parts: &[Sep], a: RotorState, b: RotorState) -> C {
    let norm = ((2 * a.j + 1) as f64 * (2 * b.j + 1) as f64).sqrt() / (8.0 * PI * PI);
    let f_phi = |p: f64| {
        let v: f64 = parts.iter().map(|s| (s.phi)(p)).product();
        C::from_polar(v, (b.m - a.m) as f64 * p)
    };
    let g_theta = |t: f64| {
        let v: f64 = parts.iter().map(|s| (s.theta)(t)).product();
        let da = wigner_small_d(a.j as i32, a.m, a.k, t).unwrap();
        let db = wigner_small_d(b.j as i32, b.m, b.k, t).unwrap();
        C::new(v * da * db, 0.0)
    };
    let h_chi = |x: f64| C::from_polar(1.0, (b.k - a.k) as f64 * x);
    q.integrate_separable(f_phi, g_theta, h_chi) * norm
}

fn max_deviation(op: &Operator, parts: &[Sep]) -> f64 {
    let basis = op.basis();
    let q = EulerQuadrature::for_band(2 * basis.j_max() + parts.len() as u32);
    let mut worst: f64 = 0.0;
    for (r, a) in basis.states().iter().enumerate() {
        for (c, b) in basis.states().iter().enumerate() {
            let want = quad_element(&q, parts, *a, *b);
            worst = worst.max((op.element(r, c) - want).norm());
        }
    }
    worst
}

#[test]
fn direction_cosines_match_quadrature() {
    let basis = Arc::new(BasisSet::new(TopClass::ProlateSymmetric, 3));
    for axis in SpaceAxis::ALL {
        let op = direction_cosine(&basis, axis);
        let dev = max_deviation(&op, &[axis_fn(axis)]);
        assert!(dev < 1e-12, "{axis:?}: {dev}");
    }
}

#[test]
fn products_match_quadrature() {
    let basis = Arc::new(BasisSet::new(TopClass::ProlateSymmetric, 2));
    for a in SpaceAxis::ALL {
        for b in SpaceAxis::ALL {
            let op = cos_product(&basis, a, b);
            let dev = max_deviation(&op, &[axis_fn(a), axis_fn(b)]);
            assert!(dev < 1e-12, "{a:?}{b:?}: {dev}");
        }
    }
    let lin = Arc::new(BasisSet::new(TopClass::Linear, 4));
    let z = axis_fn(SpaceAxis::Z);
    let dev = max_deviation(&cos_cubed(&lin).unwrap(), &[z, z, z]);
    assert!(dev < 1e-12, "cos³: {dev}");
}
