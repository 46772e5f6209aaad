//! Benchmarks for the hot kernels: bilinear deposition, the banded implicit
//! solve, one N-body force step, and the Bessel evaluations.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use kspic_core::greens::{bessel_k0, bessel_k1, Kernel};
use kspic_core::grid::{GridField, GridSpec};
use kspic_core::implicit::ImplicitSolver;
use kspic_core::nbody::NBodyState;
use kspic_core::particles::{ParticleEnsemble, StepPolicy};

fn bench_deposit(c: &mut Criterion) {
    let spec = GridSpec::square(3.2, 0.05).unwrap();
    let ens = ParticleEnsemble::uniform(4096, spec, 25.0, 7).unwrap();
    c.bench_function("deposit_4096_on_65x65", |b| {
        b.iter(|| black_box(ens.deposit_nodal_mass(spec).unwrap()))
    });
}

fn bench_implicit_solve(c: &mut Criterion) {
    let spec = GridSpec::square(3.2, 0.05).unwrap();
    let solver = ImplicitSolver::assemble(spec, 0.0, 1.0, 0.1).unwrap();
    let ens = ParticleEnsemble::uniform(4096, spec, 25.0, 7).unwrap();
    let p = ens.deposit(spec).unwrap();
    c.bench_function("elliptic_solve_65x65", |b| {
        b.iter(|| black_box(solver.solve_elliptic(&p).unwrap()))
    });
    c.bench_function("assemble_and_factor_65x65", |b| {
        b.iter(|| black_box(ImplicitSolver::assemble(spec, 0.0, 1.0, 0.1).unwrap()))
    });
}

fn bench_advance(c: &mut Criterion) {
    let spec = GridSpec::square(3.2, 0.05).unwrap();
    let cx = GridField::from_fn(spec, |x, y| 0.3 * (x - y));
    let cy = GridField::from_fn(spec, |x, y| 0.2 * x * y);
    let policy = StepPolicy::new(0.1).unwrap();
    c.bench_function("advance_4096_particles", |b| {
        let mut ens = ParticleEnsemble::uniform(4096, spec, 25.0, 7).unwrap();
        b.iter(|| black_box(ens.advance(&cx, &cy, 0.005, 0.1, &policy).unwrap()))
    });
}

fn bench_nbody_step(c: &mut Criterion) {
    c.bench_function("nbody_step_1000_log2d", |b| {
        let mut st = NBodyState::gaussian_blob(1000, 0.5, 1.0, Kernel::log2d(), 0.005, 0.1, 1e-4, 3)
            .unwrap();
        b.iter(|| black_box(st.step(0.02).unwrap()))
    });
}

fn bench_bessel(c: &mut Criterion) {
    c.bench_function("bessel_k0_k1_sweep", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            let mut x = 0.01;
            while x < 20.0 {
                acc += bessel_k0(black_box(x)).unwrap() + bessel_k1(black_box(x)).unwrap();
                x += 0.037;
            }
            black_box(acc)
        })
    });
}

criterion_group!(
    benches,
    bench_deposit,
    bench_implicit_solve,
    bench_advance,
    bench_nbody_step,
    bench_bessel
);
criterion_main!(benches);
