//! Matrix-free action of `H = Σ_{i<j} J_ij σx^i σx^j + Σ_i B_i σy^i`.
//!
//! [`XFrameKernel`] works on amplitudes rotated by a Hadamard on every spin,
//! where the coupling term is diagonal and `σy` maps to `-σy`. It is the
//! default for evolution and gaps. [`ZBasisKernel`] acts on z-basis
//! amplitudes directly with explicit pair flips.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::coupling::CouplingMatrix;
use crate::{Error, Result};

/// Below this length kernels run on the calling thread.
pub(crate) const PARALLEL_THRESHOLD: usize = 1 << 12;
pub(crate) const CHUNK: usize = 1 << 10;

/// Normalised in-place Walsh-Hadamard transform; it is its own inverse.
pub fn walsh_hadamard(v: &mut [Complex64]) {
    let len = v.len();
    debug_assert!(len.is_power_of_two());
    let mut h = 1;
    while h < len {
        for block in v.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    let scale = (len as f64).sqrt().recip();
    for a in v.iter_mut() {
        *a *= scale;
    }
}

/// `(σy v)` component for an index whose bit is `set`, given `v` at the
/// partner index.
#[inline(always)]
fn sigma_y_gather(set: bool, v: Complex64) -> Complex64 {
    if set {
        Complex64::new(-v.im, v.re)
    } else {
        Complex64::new(v.im, -v.re)
    }
}

/// `out -= b · σy-gather(partner)` over a run of indices sharing one bit value.
#[inline(always)]
fn field_pass(out: &mut [Complex64], partner: &[Complex64], set: bool, b: f64) {
    let sb = if set { b } else { -b };
    for (o, v) in out.iter_mut().zip(partner) {
        o.re += sb * v.im;
        o.im -= sb * v.re;
    }
}

/// Linear action of the Ising Hamiltonian at a given field strength.
pub trait Kernel: Sync {
    fn n(&self) -> usize;

    /// `out = factor · H(b) ψ`, with `B_i = b · profile_i`.
    fn apply(&self, b: f64, factor: Complex64, psi: &[Complex64], out: &mut [Complex64]);

    /// Maps z-basis amplitudes into the kernel's working frame.
    fn enter_frame(&self, z: &mut [Complex64]);

    /// Inverse of [`Kernel::enter_frame`].
    fn leave_frame(&self, v: &mut [Complex64]);

    /// Applies the global parity `⊗σy` expressed in the working frame.
    fn parity(&self, psi: &[Complex64], out: &mut [Complex64]);

    /// Upper bound on the spectral radius of `H(b)`.
    fn norm_bound(&self, b: f64) -> f64;
}

fn check_profile(j: &CouplingMatrix, profile: &[f64]) -> Result<Vec<f64>> {
    let n = j.n();
    if n > 30 {
        return Err(Error::invalid("state-vector kernels support at most 30 spins"));
    }
    match profile.len() {
        0 => Ok(vec![1.0; n]),
        len if len == n && profile.iter().all(|p| p.is_finite()) => Ok(profile.to_vec()),
        len => Err(Error::invalid(format!("field profile has {len} entries for {n} spins"))),
    }
}

fn fill<F>(out: &mut [Complex64], f: F)
where
    F: Fn(usize) -> Complex64 + Sync,
{
    if out.len() < PARALLEL_THRESHOLD {
        for (s, o) in out.iter_mut().enumerate() {
            *o = f(s);
        }
    } else {
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (k, o) in chunk.iter_mut().enumerate() {
                *o = f(base + k);
            }
        });
    }
}

fn parity_with_sign(n: usize, x_frame: bool, psi: &[Complex64], out: &mut [Complex64]) {
    let full = psi.len() - 1;
    let phase = super::state::i_pow(n);
    fill(out, |t| {
        let pop = t.count_ones() as usize;
        let odd = if x_frame { pop % 2 == 1 } else { (n - pop) % 2 == 1 };
        let v = phase * psi[t ^ full];
        if odd {
            -v
        } else {
            v
        }
    });
}

/// Kernel in the Hadamard-rotated frame: `H' = D + (-Σ B_i σy^i)` with `D`
/// the diagonal of the coupling term.
#[derive(Debug, Clone)]
pub struct XFrameKernel {
    n: usize,
    diag: Vec<f64>,
    profile: Vec<f64>,
    coupling_bound: f64,
}

impl XFrameKernel {
    /// An empty `profile` means uniform unit multipliers.
    pub fn new(j: &CouplingMatrix, profile: &[f64]) -> Result<Self> {
        let profile = check_profile(j, profile)?;
        let n = j.n();
        let pairs: Vec<(usize, usize, f64)> = j.pairs().filter(|p| p.2 != 0.0).collect();
        let mut diag = vec![0.0; 1 << n];
        let compute = |s: usize| {
            let mut e = 0.0;
            for &(a, b, v) in &pairs {
                if ((s >> a) ^ (s >> b)) & 1 == 0 {
                    e += v;
                } else {
                    e -= v;
                }
            }
            e
        };
        if diag.len() < PARALLEL_THRESHOLD {
            for (s, d) in diag.iter_mut().enumerate() {
                *d = compute(s);
            }
        } else {
            diag.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
                for (k, d) in chunk.iter_mut().enumerate() {
                    *d = compute(c * CHUNK + k);
                }
            });
        }
        let coupling_bound = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        Ok(XFrameKernel {
            n,
            diag,
            profile,
            coupling_bound,
        })
    }

    /// Diagonal of the coupling term in the σx product basis.
    pub fn coupling_diagonal(&self) -> &[f64] {
        &self.diag
    }
}

impl Kernel for XFrameKernel {
    fn n(&self) -> usize {
        self.n
    }

    fn apply(&self, b: f64, factor: Complex64, psi: &[Complex64], out: &mut [Complex64]) {
        let fields: Vec<(usize, f64)> = self
            .profile
            .iter()
            .map(|p| b * p)
            .enumerate()
            .filter(|f| f.1 != 0.0)
            .collect();
        let body = |base: usize, chunk: &mut [Complex64]| {
            let len = chunk.len();
            for (k, o) in chunk.iter_mut().enumerate() {
                *o = psi[base + k] * self.diag[base + k];
            }
            for &(i, bi) in &fields {
                let m = 1usize << i;
                if m >= len {
                    let set = base & m != 0;
                    let partner = &psi[(base ^ m)..(base ^ m) + len];
                    field_pass(chunk, partner, set, bi);
                } else {
                    for (q, block) in chunk.chunks_mut(2 * m).enumerate() {
                        let start = base + q * 2 * m;
                        let (lo, hi) = block.split_at_mut(m);
                        field_pass(lo, &psi[start + m..start + 2 * m], false, bi);
                        field_pass(hi, &psi[start..start + m], true, bi);
                    }
                }
            }
            for o in chunk.iter_mut() {
                *o *= factor;
            }
        };
        if out.len() < PARALLEL_THRESHOLD {
            body(0, out);
        } else {
            out.par_chunks_mut(CHUNK)
                .enumerate()
                .for_each(|(c, chunk)| body(c * CHUNK, chunk));
        }
    }

    fn enter_frame(&self, z: &mut [Complex64]) {
        walsh_hadamard(z);
    }

    fn leave_frame(&self, v: &mut [Complex64]) {
        walsh_hadamard(v);
    }

    fn parity(&self, psi: &[Complex64], out: &mut [Complex64]) {
        parity_with_sign(self.n, true, psi, out);
    }

    fn norm_bound(&self, b: f64) -> f64 {
        self.coupling_bound + self.profile.iter().map(|p| (b * p).abs()).sum::<f64>()
    }
}

/// Kernel on z-basis amplitudes with explicit `σx σx` pair flips.
#[derive(Debug, Clone)]
pub struct ZBasisKernel {
    n: usize,
    pairs: Vec<(usize, f64)>,
    profile: Vec<f64>,
    coupling_bound: f64,
}

impl ZBasisKernel {
    pub fn new(j: &CouplingMatrix, profile: &[f64]) -> Result<Self> {
        let profile = check_profile(j, profile)?;
        let pairs: Vec<(usize, f64)> = j
            .pairs()
            .filter(|p| p.2 != 0.0)
            .map(|(a, b, v)| ((1usize << a) | (1usize << b), v))
            .collect();
        let coupling_bound = pairs.iter().map(|p| p.1.abs()).sum();
        Ok(ZBasisKernel {
            n: j.n(),
            pairs,
            profile,
            coupling_bound,
        })
    }
}

impl Kernel for ZBasisKernel {
    fn n(&self) -> usize {
        self.n
    }

    fn apply(&self, b: f64, factor: Complex64, psi: &[Complex64], out: &mut [Complex64]) {
        let fields: Vec<(usize, f64)> = self
            .profile
            .iter()
            .map(|p| b * p)
            .enumerate()
            .filter(|f| f.1 != 0.0)
            .collect();
        fill(out, |s| {
            let mut acc = Complex64::new(0.0, 0.0);
            for &(mask, v) in &self.pairs {
                acc += psi[s ^ mask] * v;
            }
            for &(i, bi) in &fields {
                let m = 1usize << i;
                acc += sigma_y_gather(s & m != 0, psi[s ^ m]) * bi;
            }
            acc * factor
        });
    }

    fn enter_frame(&self, _z: &mut [Complex64]) {}

    fn leave_frame(&self, _v: &mut [Complex64]) {}

    fn parity(&self, psi: &[Complex64], out: &mut [Complex64]) {
        parity_with_sign(self.n, false, psi, out);
    }

    fn norm_bound(&self, b: f64) -> f64 {
        self.coupling_bound + self.profile.iter().map(|p| (b * p).abs()).sum::<f64>()
    }
}
