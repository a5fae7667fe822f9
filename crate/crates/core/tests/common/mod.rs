//! Dense reference propagator shared by the integration tests.

#![allow(dead_code)]

use kzm_core::engine::{HamiltonianSign, QuenchSchedule, SpinState};
use kzm_core::CouplingMatrix;
use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn sigma_x() -> CMat {
    CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
}

pub fn sigma_y() -> CMat {
    CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)])
}

/// `op` on ion `ion` of `n`; ion 0 is the least significant index bit.
pub fn on_site(op: &CMat, ion: usize, n: usize) -> CMat {
    let high = CMat::identity(1 << (n - 1 - ion), 1 << (n - 1 - ion));
    let low = CMat::identity(1 << ion, 1 << ion);
    high.kronecker(op).kronecker(&low)
}

/// Dense lab-frame `H = Σ J σxσx + b Σ p_i σy`.
pub fn dense_hamiltonian(j: &CouplingMatrix, b: f64, profile: &[f64]) -> CMat {
    let n = j.n();
    let dim = 1 << n;
    let sx: Vec<CMat> = (0..n).map(|i| on_site(&sigma_x(), i, n)).collect();
    let sy: Vec<CMat> = (0..n).map(|i| on_site(&sigma_y(), i, n)).collect();
    let mut h = CMat::zeros(dim, dim);
    for a in 0..n {
        for bb in (a + 1)..n {
            h += &sx[a] * &sx[bb] * c(j.get(a, bb), 0.0);
        }
        let p = profile.get(a).copied().unwrap_or(1.0);
        h += &sy[a] * c(b * p, 0.0);
    }
    h
}

/// Fourth-order Magnus propagation with two Gauss points per step.
pub fn magnus_oracle(initial: &SpinState, j: &CouplingMatrix, s: &QuenchSchedule, steps: usize) -> SpinState {
    let sign = match s.sign {
        HamiltonianSign::Ferromagnetic => -1.0,
        HamiltonianSign::Antiferromagnetic => 1.0,
    };
    let h = s.total_time / steps as f64;
    let off = 3f64.sqrt() / 6.0;
    let mut psi = nalgebra::DVector::from_column_slice(initial.amplitudes());
    for k in 0..steps {
        let t0 = k as f64 * h;
        let gen = |t: f64| dense_hamiltonian(j, s.value(t.min(s.total_time)).unwrap(), &s.field_profile) * c(0.0, -sign);
        let a1 = gen(t0 + h * (0.5 - off));
        let a2 = gen(t0 + h * (0.5 + off));
        let comm = &a2 * &a1 - &a1 * &a2;
        let omega = (&a1 + &a2) * c(0.5 * h, 0.0) + comm * c(3f64.sqrt() / 12.0 * h * h, 0.0);
        psi = omega.exp() * psi;
    }
    SpinState::from_amplitudes(initial.n(), psi.as_slice().to_vec()).unwrap()
}

/// `1 - |⟨a|b⟩|²` for normalised copies of both states.
pub fn infidelity(a: &SpinState, b: &SpinState) -> f64 {
    1.0 - a.fidelity(b) / (a.norm() * b.norm()).powi(2)
}

/// `⟨σx^a σx^b⟩` from a dense operator product.
pub fn dense_xx(state: &SpinState, a: usize, b: usize) -> f64 {
    let n = state.n();
    let op = on_site(&sigma_x(), a, n) * on_site(&sigma_x(), b, n);
    let v = nalgebra::DVector::from_column_slice(state.amplitudes());
    (v.adjoint() * op * &v)[(0, 0)].re
}

/// Ground state of the evolving Hamiltonian `±H(b)` by dense diagonalisation.
pub fn dense_ground_state(j: &CouplingMatrix, b: f64, sign: HamiltonianSign) -> SpinState {
    let f = match sign {
        HamiltonianSign::Ferromagnetic => -1.0,
        HamiltonianSign::Antiferromagnetic => 1.0,
    };
    let h = dense_hamiltonian(j, b, &[]) * c(f, 0.0);
    let eig = h.symmetric_eigen();
    let k = (0..eig.eigenvalues.len())
        .min_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]))
        .unwrap();
    let v: Vec<Complex64> = eig.eigenvectors.column(k).iter().copied().collect();
    SpinState::from_amplitudes(j.n(), v).unwrap()
}
