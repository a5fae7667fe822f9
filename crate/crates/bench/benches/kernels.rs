use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;

use kzm_core::chain::equilibrium_positions;
use kzm_core::engine::hamiltonian::{walsh_hadamard, Kernel, XFrameKernel, ZBasisKernel};
use kzm_core::engine::{evolve, initial_state};
use kzm_core::units::angular;
use kzm_core::{CouplingMatrix, HamiltonianSign, QuenchSchedule, TrapParams};

fn random_state(n: usize) -> Vec<Complex64> {
    let mut x = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = || {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    (0..1usize << n).map(|_| Complex64::new(next(), next())).collect()
}

fn apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("apply");
    for n in [10, 14, 18] {
        let j = CouplingMatrix::power_law(n, angular(450.0), 1.0);
        let profile = vec![1.0; n];
        let psi = random_state(n);
        let mut out = vec![Complex64::default(); psi.len()];
        let x = XFrameKernel::new(&j, &profile).unwrap();
        let z = ZBasisKernel::new(&j, &profile).unwrap();
        let factor = Complex64::new(0.0, -1.0);
        group.bench_with_input(BenchmarkId::new("x_frame", n), &n, |b, _| {
            b.iter(|| x.apply(900.0, factor, &psi, &mut out))
        });
        group.bench_with_input(BenchmarkId::new("z_basis", n), &n, |b, _| {
            b.iter(|| z.apply(900.0, factor, &psi, &mut out))
        });
        let mut v = psi.clone();
        group.bench_with_input(BenchmarkId::new("walsh_hadamard", n), &n, |b, _| {
            b.iter(|| walsh_hadamard(&mut v))
        });
    }
    group.finish();
}

fn quench(c: &mut Criterion) {
    let mut group = c.benchmark_group("evolve");
    group.sample_size(10);
    for n in [8, 12] {
        let j0 = angular(450.0);
        let j = CouplingMatrix::power_law(n, j0, 1.0);
        let sign = HamiltonianSign::Ferromagnetic;
        let s = QuenchSchedule::exponential(6.0 * j0, 4.0 / j0, None, sign).unwrap();
        let psi = initial_state(n, sign.initial_direction()).unwrap();
        group.bench_with_input(BenchmarkId::new("exponential_j0t4", n), &n, |b, _| {
            b.iter(|| evolve(&psi, &j, &s, 1e-9, &[]).unwrap())
        });
    }
    group.finish();
}

fn chain(c: &mut Criterion) {
    let mut group = c.benchmark_group("equilibrium");
    for n in [13, 61] {
        let trap = TrapParams::ytterbium(n, angular(0.25e6), angular(3.1e6));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| equilibrium_positions(&trap).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, apply, quench, chain);
criterion_main!(benches);
