use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rotkit::basis::{BasisSet, TopClass};
use rotkit::dynamics::{propagate_ensemble, thermal_ensemble, DrivenHamiltonian, PropagationOptions, TimeGrid};
use rotkit::exec::Execution;
use rotkit::hamiltonian::RotorSpec;
use rotkit::observables::AlignmentOperators;
use rotkit::pulses::{FieldMode, PulseSpec};

fn thermal_alignment(c: &mut Criterion) {
    let basis = Arc::new(BasisSet::new(TopClass::Linear, 24));
    let spec = RotorSpec::linear(0.5).with_polarizability(2.0, 1.0);
    let ens = thermal_ensemble(&spec, &basis, 10.0).unwrap();
    let pulse = PulseSpec::GaussianEnvelope {
        center: 0.3,
        fwhm: 0.1,
        peak: [0.0, 0.0, 6.0],
        phases: [0.0; 3],
        mode: FieldMode::Averaged,
        carrier: 0.0,
    };
    let ham = DrivenHamiltonian::from_pulses(&spec, &basis, &[pulse]).unwrap();
    let probes = AlignmentOperators::new(&spec, &basis).unwrap().probes();
    let grid = TimeGrid::uniform(0.0, 1.0, 50).unwrap();

    let mut group = c.benchmark_group("thermal_alignment");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        let opts = PropagationOptions { execution: exec, ..PropagationOptions::with_step(5e-4) };
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| propagate_ensemble(&ens, &ham, &grid, &probes, opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, thermal_alignment);
criterion_main!(benches);
