use kzm_core::chain::{equilibrium_positions, transverse_modes, TrapParams};
use kzm_core::coupling::{fit_power_law, ising_couplings, spin_flip_resonances, PowerLawOptions};
use kzm_core::units::{angular, YB171_ION_MASS};
use kzm_core::{CouplingMatrix, LaserParams, ModeSpectrum};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

const DELTA_K: f64 = 2.0 * std::f64::consts::SQRT_2 * std::f64::consts::PI / 355e-9;

fn modes(n: usize) -> ModeSpectrum {
    let t = TrapParams::ytterbium(n, angular(0.2e6), angular(3.1166e6));
    transverse_modes(&equilibrium_positions(&t).unwrap(), &t).unwrap()
}

fn laser(m: &ModeSpectrum, offset_hz: f64) -> LaserParams {
    LaserParams::new(m.frequencies[0] + angular(offset_hz), DELTA_K, YB171_ION_MASS)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn couplings_symmetric_and_quadratic_in_rabi(
        n in 2usize..=8,
        rabi in prop::collection::vec(0.2f64..1.0, 8),
        s in 0.1f64..4.0,
    ) {
        let m = modes(n);
        let l = laser(&m, 30e3);
        let omega: Vec<f64> = rabi[..n].iter().map(|r| angular(1e5) * r).collect();
        let j = ising_couplings(&omega, &m, &l).unwrap();
        let a = j.as_matrix();
        prop_assert_eq!(a.clone(), a.transpose());
        prop_assert!((0..n).all(|i| a[(i, i)] == 0.0));
        let scaled: Vec<f64> = omega.iter().map(|o| o * s).collect();
        let js = ising_couplings(&scaled, &m, &l).unwrap();
        for (i, k, v) in j.pairs() {
            prop_assert!((js.get(i, k) - s * s * v).abs() <= 1e-12 * (s * s * v).abs());
        }
        let nn: Vec<f64> = (0..n - 1).map(|i| j.get(i, i + 1)).collect();
        prop_assert!(nn.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn power_law_fit_is_scale_equivariant(
        n in 3usize..=20,
        j0 in 10.0f64..5000.0,
        alpha in 0.2f64..2.5,
        s in prop::sample::select(vec![-3.0, 0.01, 0.5, 7.0]),
    ) {
        let j = CouplingMatrix::power_law(n, j0, alpha);
        let base = fit_power_law(&j, PowerLawOptions::default()).unwrap();
        let fit = fit_power_law(&j.scaled(s), PowerLawOptions::default()).unwrap();
        prop_assert!((fit.j0 - s * base.j0).abs() <= 1e-10 * (s * base.j0).abs());
        prop_assert!((fit.alpha - base.alpha).abs() <= 1e-12);
    }

    #[test]
    fn resonances_are_linear(n in 2usize..=10, seed in any::<u64>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut random = || {
            let m = DMatrix::from_fn(n, n, |i, k| if k > i { StandardNormal.sample(&mut rng) } else { 0.0 });
            CouplingMatrix::from_upper(&m).unwrap()
        };
        let (a, b) = (random(), random());
        let sum = CouplingMatrix::from_upper(&(a.as_matrix() + b.as_matrix()).upper_triangle()).unwrap();
        let lhs = spin_flip_resonances(&sum);
        let ra = spin_flip_resonances(&a);
        let rb = spin_flip_resonances(&b);
        for i in 0..n {
            prop_assert!((lhs[i] - (ra[i] + rb[i])).abs() <= 1e-12 * (1.0 + lhs[i].abs()));
        }
    }
}

#[test]
fn far_detuning_suppresses_couplings() {
    let m = modes(5);
    let omega = vec![angular(1e5); 5];
    let near = LaserParams::new(1.01 * m.frequencies[0], DELTA_K, YB171_ION_MASS);
    let far = LaserParams::new(10.0 * m.frequencies[0], DELTA_K, YB171_ION_MASS);
    let jn = ising_couplings(&omega, &m, &near).unwrap();
    let jf = ising_couplings(&omega, &m, &far).unwrap();
    for (i, k, v) in jn.pairs() {
        assert!(jf.get(i, k).abs() < 0.01 * v.abs());
    }
}

#[test]
fn noisy_power_law_recovers_alpha() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
    let n = 13;
    let exact = CouplingMatrix::power_law(n, angular(150.0), 1.2);
    for _ in 0..20 {
        let noisy = DMatrix::from_fn(n, n, |i, k| {
            if k > i {
                let z: f64 = StandardNormal.sample(&mut rng);
                exact.get(i, k) * (0.05 * z).exp()
            } else {
                0.0
            }
        });
        let fit = fit_power_law(&CouplingMatrix::from_upper(&noisy).unwrap(), PowerLawOptions::default()).unwrap();
        assert!((fit.alpha - 1.2).abs() < 0.05, "alpha {}", fit.alpha);
        assert!(fit.alpha_err >= 0.0 && fit.j0_err >= 0.0);
    }
}
