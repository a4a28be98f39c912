//! Throughput probes for the data-parallel inner loops: particle updates,
//! coefficient tabulation, and phase-space grid sweeps. The numerics are
//! identical with and without the `parallel` feature, so the comparison is
//! across builds:
//!
//!   cargo bench -p hamcg-core -- --save-baseline rayon
//!   cargo bench -p hamcg-core --no-default-features -- --baseline rayon

use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hamcg_core::coeffs::{tabulate, TabulateOpts};
use hamcg_core::model::{BoxDomain, HamiltonianModel, Potential};
use hamcg_core::reeb::{ReebBuildOpts, ReebGraph};
use hamcg_core::sde::{
    simulate_perturbed_hamiltonian, simulate_vfp_particles, ParticleEnsemble, SdeParams,
};
use hamcg_core::vfp::{solve_vfp, KineticForm, PhaseDensity};

fn particle_updates(c: &mut Criterion) {
    let model = HamiltonianModel::new(1.0, Potential::DoubleWell { a: 1.0, b: 1.0 }).unwrap();
    let n = 40_000;
    let init = ParticleEnsemble::gaussian(n, 1.0, 0.0, 0.3, 1.0, 7).unwrap();

    let mut group = c.benchmark_group("particles");
    group.sample_size(10);
    group.warm_up_time(Duration::from_millis(500));
    group.measurement_time(Duration::from_secs(3));

    // ten friction-Langevin steps over the whole ensemble
    let friction = SdeParams::vfp(1.0, 1.0, 1e-3, 1e-2);
    group.bench_with_input(BenchmarkId::new("vfp_steps", n), &init, |b, init| {
        b.iter(|| simulate_vfp_particles(&model, &friction, init, &[]).unwrap())
    });

    // ten perturbed-Hamiltonian steps, the graph-limit hot path
    let perturbed = SdeParams::perturbed(1e-3, 1e-3, 1e-2);
    group.bench_with_input(BenchmarkId::new("perturbed_steps", n), &init, |b, init| {
        b.iter(|| simulate_perturbed_hamiltonian(&model, &perturbed, init, &[]).unwrap())
    });
    group.finish();
}

fn coefficient_tabulation(c: &mut Criterion) {
    let model = HamiltonianModel::new(1.0, Potential::DoubleWell { a: 1.0, b: 1.0 }).unwrap();
    let domain = BoxDomain::new(-2.7, 2.7, -2.6, 2.6, 192, 192).unwrap();
    let graph = ReebGraph::build(&model, &domain, &ReebBuildOpts::new(2.5)).unwrap();

    let mut group = c.benchmark_group("coefficients");
    group.sample_size(10);
    group.warm_up_time(Duration::from_millis(500));
    group.measurement_time(Duration::from_secs(5));
    group.bench_function("tabulate_double_well", |b| {
        b.iter(|| tabulate(&graph, &TabulateOpts::default()).unwrap())
    });
    group.finish();
}

fn phase_space_sweeps(c: &mut Criterion) {
    let model = HamiltonianModel::new(1.0, Potential::Harmonic { k: 1.0 }).unwrap();
    let domain = BoxDomain::new(-6.0, 6.0, -6.5, 6.5, 128, 128).unwrap();
    let init = PhaseDensity::from_fn(&domain, |q, p| {
        (-(q - 0.5) * (q - 0.5) - p * p / 2.0).exp()
    })
    .normalized()
    .unwrap();

    let mut group = c.benchmark_group("phase");
    group.sample_size(10);
    group.warm_up_time(Duration::from_millis(500));
    group.measurement_time(Duration::from_secs(3));
    // ten operator-split steps on a 128 x 128 grid
    group.bench_function("kinetic_steps_128", |b| {
        b.iter(|| {
            solve_vfp(&model, KineticForm::Friction { gamma: 1.0 }, &init, 2e-3, 2e-2, &[])
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, particle_updates, coefficient_tabulation, phase_space_sweeps);
criterion_main!(benches);
