mod common;

use std::sync::Arc;

use kzm_core::engine::{
    energy_gap, evolve, evolve_with, initial_state, EvolveOptions, GapOptions, KernelChoice, LocalAdiabaticPath,
};
use kzm_core::observables::{defect_density, SpinStatistics};
use kzm_core::units::angular;
use kzm_core::{CouplingMatrix, HamiltonianSign, QuenchSchedule};
use nalgebra::DMatrix;
use proptest::prelude::*;

use common::{dense_ground_state, dense_hamiltonian, infidelity, magnus_oracle};

const FM: HamiltonianSign = HamiltonianSign::Ferromagnetic;
const AFM: HamiltonianSign = HamiltonianSign::Antiferromagnetic;

fn j0() -> f64 {
    angular(450.0)
}

#[test]
fn up_y_is_a_parity_eigenstate() {
    for n in 1..=8 {
        let psi = initial_state(n, kzm_core::SpinDirection::UpY).unwrap();
        assert!((0..n).all(|i| (psi.sigma_y(i) - 1.0).abs() < 1e-12));
        assert!((psi.parity().re - 1.0).abs() < 1e-12 && psi.parity().im.abs() < 1e-12);
        assert!((psi.norm() - 1.0).abs() < 1e-14);
    }
}

#[test]
fn schedule_values() {
    let b0 = 3.0;
    let e = QuenchSchedule::exponential(b0, 1.0, None, FM).unwrap();
    assert_eq!(e.value(1.0).unwrap(), 0.0);
    assert!((e.value(0.0).unwrap() / b0 - (1.0 - (-5f64).exp())).abs() < 1e-15);
    let l = QuenchSchedule::linear(b0, 2.0, FM).unwrap();
    assert!((l.value(1.0).unwrap() - b0 / 2.0).abs() < 1e-15);
    assert!(l.value(2.5).is_err() && l.value(-0.1).is_err());
}

#[test]
fn sudden_quench_leaves_the_state_alone() {
    let j = CouplingMatrix::power_law(4, j0(), 1.0);
    let s = QuenchSchedule::exponential(6.0 * j0(), 1e-9 / j0(), None, FM).unwrap();
    let psi0 = initial_state(4, FM.initial_direction()).unwrap();
    let out = evolve(&psi0, &j, &s, 1e-9, &[]).unwrap();
    let psi = &out[0].1;
    assert!(infidelity(psi, &psi0) < 1e-8);
    assert!((defect_density(psi).unwrap().rho - 0.5).abs() < 1e-8);
}

#[test]
fn three_ion_oracle_with_uneven_couplings() {
    let m = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.3, 0.0, 0.0, 0.7, 0.0, 0.0, 0.0]) * j0();
    let j = CouplingMatrix::from_upper(&m).unwrap();
    for sign in [FM, AFM] {
        let s = QuenchSchedule::linear(5.0 * j0(), 4.0 / j0(), sign).unwrap();
        let psi0 = initial_state(3, sign.initial_direction()).unwrap();
        for kernel in [KernelChoice::XFrame, KernelChoice::ZBasis] {
            let opts = EvolveOptions { kernel, ..Default::default() };
            let got = evolve_with(&psi0, &j, &s, &[], opts).unwrap().final_state().clone();
            assert!(infidelity(&got, &magnus_oracle(&psi0, &j, &s, 1000)) < 1e-8);
        }
    }
}

#[test]
fn slow_local_adiabatic_two_ion_quench_stays_in_the_ground_manifold() {
    let j = CouplingMatrix::power_law(2, j0(), 1.0);
    let b0 = 6.0 * j0();
    let path = Arc::new(LocalAdiabaticPath::build(&j, b0, FM, &[], 64, GapOptions::default()).unwrap());
    let start = dense_ground_state(&j, b0, FM);
    // At B = 0 the ground manifold of -H is spanned by |++⟩ and |--⟩.
    for x in [50.0, 100.0] {
        let s = QuenchSchedule::local_adiabatic(path.clone(), x / j0()).unwrap();
        let psi = evolve(&start, &j, &s, 1e-9, &[]).unwrap().pop().unwrap().1;
        let p = psi.x_probabilities();
        assert!(p[0] + p[3] > 0.99, "|J0|T = {x}: {}", p[0] + p[3]);
    }
}

#[test]
fn local_adiabatic_path_is_slowest_at_the_gap_minimum() {
    let j = CouplingMatrix::power_law(4, j0(), 1.0);
    let path = LocalAdiabaticPath::build(&j, 6.0 * j0(), FM, &[], 64, GapOptions::default()).unwrap();
    let t = 1.0;
    let samples: Vec<(f64, f64, f64)> = (0..=400)
        .map(|k| {
            let u = k as f64 / 400.0;
            let b = path.field_at_fraction(u);
            (path.gap_at(b), path.rate_at_fraction(u, t).abs(), b)
        })
        .collect();
    let slowest = samples.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let narrowest = samples.iter().min_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
    assert!((slowest.2 - narrowest.2).abs() < 0.05 * 6.0 * j0());
    assert_eq!(path.field_at_fraction(0.0), 6.0 * j0());
    assert!(path.field_at_fraction(1.0).abs() < 1e-9 * 6.0 * j0());
}

#[test]
fn gap_limits() {
    let j = CouplingMatrix::power_law(2, -j0(), 1.0);
    let g = energy_gap(&j, 0.0, FM).unwrap();
    assert!((g.gap / (2.0 * j0()) - 1.0).abs() < 1e-10);
    let single = CouplingMatrix::zeros(1);
    assert!((energy_gap(&single, 7.0, FM).unwrap().gap - 14.0).abs() < 1e-12);
}

#[test]
fn gap_matches_dense_spectrum_for_five_ions() {
    let j = CouplingMatrix::power_law(5, j0(), 1.3);
    for b in [0.2, 0.8, 2.0] {
        for sign in [FM, AFM] {
            let got = energy_gap(&j, b * j0(), sign).unwrap();
            let h = dense_hamiltonian(&j, b * j0(), &[]) * num_complex::Complex64::new(sign.factor(), 0.0);
            let eig = h.symmetric_eigen();
            // Parity P commutes with H: restrict to the sector of the start state.
            let n = 5;
            let parity = (0..n).fold(common::CMat::identity(32, 32), |acc, i| acc * common::on_site(&common::sigma_y(), i, n));
            let target = sign.sector_parity(n);
            let mut energies: Vec<f64> = (0..32)
                .filter(|&k| {
                    let v = eig.eigenvectors.column(k);
                    ((v.adjoint() * &parity * v)[(0, 0)].re - target).abs() < 1e-6
                })
                .map(|k| eig.eigenvalues[k])
                .collect();
            energies.sort_by(f64::total_cmp);
            let want = energies[1] - energies[0];
            assert!((got.gap / want - 1.0).abs() < 1e-8, "B={b} {sign:?}: {} vs {want}", got.gap);
        }
    }
}

fn coupling_strategy() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, u8, bool)> {
    (2usize..=6).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(-1.0f64..1.0, n * (n - 1) / 2),
            prop::collection::vec(0.6f64..1.0, n),
            0u8..3,
            any::<bool>(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn quenches_are_unitary_and_parity_preserving((n, upper, profile, kind, afm) in coupling_strategy()) {
        let mut m = DMatrix::zeros(n, n);
        let mut k = 0;
        for a in 0..n {
            for b in (a + 1)..n {
                m[(a, b)] = upper[k] * j0();
                k += 1;
            }
        }
        let j = CouplingMatrix::from_upper(&m).unwrap();
        let sign = if afm { AFM } else { FM };
        let b0 = 4.0 * j0();
        let t = 3.0 / j0();
        let s = match kind {
            0 => QuenchSchedule::linear(b0, t, sign),
            1 => QuenchSchedule::exponential(b0, t, None, sign),
            _ => {
                let path = LocalAdiabaticPath::build(&j, b0, sign, &profile, 32, GapOptions::default()).unwrap();
                QuenchSchedule::local_adiabatic(Arc::new(path), t)
            }
        }
        .unwrap()
        .with_field_profile(profile.clone())
        .unwrap();
        let psi0 = initial_state(n, sign.initial_direction()).unwrap();
        let times: Vec<f64> = (1..=5).map(|k| t * k as f64 / 5.0).collect();
        let snaps = evolve(&psi0, &j, &s, 1e-9, &times).unwrap();
        let p0 = psi0.parity();
        for (_, psi) in &snaps {
            prop_assert!((psi.norm() - 1.0).abs() < 1e-8);
            prop_assert!((psi.parity() - p0).norm() < 1e-7);
            let m = SpinStatistics::from_state(psi).magnetization;
            prop_assert!(m.iter().all(|v| v.abs() < 1e-7));
        }
    }
}
