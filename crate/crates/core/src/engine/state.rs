use std::io::{Read, Write};

use num_complex::Complex64;

use super::hamiltonian::walsh_hadamard;
use crate::{Error, Result};

/// Default ceiling on the number of simulated spins.
pub const DEFAULT_SPIN_CAP: usize = 14;
/// Configurable caps above this are rejected outright.
pub const HARD_SPIN_CAP: usize = 20;

const SNAPSHOT_MAGIC: &[u8; 4] = b"KZSV";
const SNAPSHOT_VERSION: u16 = 1;

/// Bytes needed to hold one `n`-spin state vector.
pub fn state_bytes(n: usize) -> u64 {
    16u64 << n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinDirection {
    /// `(|0⟩ + i|1⟩)/√2` on every ion.
    UpY,
    /// `(|0⟩ - i|1⟩)/√2` on every ion.
    DownY,
}

/// Pure state of `n` spins in the z basis. Bit `i` of the index is ion `i`;
/// a clear bit is spin up.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinState {
    n: usize,
    amplitudes: Vec<Complex64>,
}

impl SpinState {
    pub fn from_amplitudes(n: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        if n == 0 || n > 63 || amplitudes.len() != 1usize << n {
            return Err(Error::invalid(format!(
                "{} amplitudes do not describe {n} spins",
                amplitudes.len()
            )));
        }
        Ok(SpinState { n, amplitudes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &SpinState) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `|⟨self|other⟩|²`.
    pub fn fidelity(&self, other: &SpinState) -> f64 {
        self.inner(other).norm_sqr()
    }

    /// Amplitudes in the σx product basis; a clear bit is `|+x⟩`.
    pub fn x_amplitudes(&self) -> Vec<Complex64> {
        let mut v = self.amplitudes.clone();
        walsh_hadamard(&mut v);
        v
    }

    pub fn x_probabilities(&self) -> Vec<f64> {
        self.x_amplitudes().iter().map(|a| a.norm_sqr()).collect()
    }

    /// `⟨σy^i⟩`.
    pub fn sigma_y(&self, ion: usize) -> f64 {
        let m = 1usize << ion;
        let mut s = 0.0;
        for (k, a) in self.amplitudes.iter().enumerate() {
            if k & m == 0 {
                // ⟨ψ|σy|ψ⟩ restricted to the pair (k, k|m): 2 Im(conj(a0) a1).
                let b = self.amplitudes[k | m];
                s += 2.0 * (a.conj() * b).im;
            }
        }
        s
    }

    /// Applies the global parity `P = ⊗σy`.
    pub fn apply_parity(&self) -> SpinState {
        let n = self.n;
        let full = (1usize << n) - 1;
        let phase = i_pow(n);
        let amplitudes = (0..self.amplitudes.len())
            .map(|t| {
                let sign = if (n - t.count_ones() as usize).is_multiple_of(2) { 1.0 } else { -1.0 };
                phase * sign * self.amplitudes[t ^ full]
            })
            .collect();
        SpinState { n, amplitudes }
    }

    /// `⟨P⟩` for the global parity.
    pub fn parity(&self) -> Complex64 {
        self.inner(&self.apply_parity())
    }

    /// Writes `KZSV`, version, spin count, 8 reserved bytes, then the
    /// amplitudes as little-endian `(re, im)` doubles.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(SNAPSHOT_MAGIC)?;
        out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        out.write_all(&(self.n as u16).to_le_bytes())?;
        out.write_all(&[0u8; 8])?;
        for a in &self.amplitudes {
            out.write_all(&a.re.to_le_bytes())?;
            out.write_all(&a.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut input: R) -> Result<Self> {
        let mut header = [0u8; 16];
        input.read_exact(&mut header)?;
        let bad = |m: &str| Error::MalformedData {
            line: 0,
            message: m.to_string(),
        };
        if &header[..4] != SNAPSHOT_MAGIC {
            return Err(bad("not a state snapshot"));
        }
        if u16::from_le_bytes([header[4], header[5]]) != SNAPSHOT_VERSION {
            return Err(bad("unsupported snapshot version"));
        }
        let n = u16::from_le_bytes([header[6], header[7]]) as usize;
        if n == 0 || n > HARD_SPIN_CAP {
            return Err(bad("spin count out of range"));
        }
        let mut amplitudes = Vec::with_capacity(1 << n);
        let mut buf = [0u8; 16];
        for _ in 0..(1usize << n) {
            input.read_exact(&mut buf)?;
            let re = f64::from_le_bytes(buf[..8].try_into().unwrap());
            let im = f64::from_le_bytes(buf[8..].try_into().unwrap());
            amplitudes.push(Complex64::new(re, im));
        }
        SpinState::from_amplitudes(n, amplitudes)
    }
}

pub(crate) fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn i_pow(n: usize) -> Complex64 {
    match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// Product state with every spin along `direction`, within the default cap.
pub fn initial_state(n: usize, direction: SpinDirection) -> Result<SpinState> {
    initial_state_with_cap(n, direction, DEFAULT_SPIN_CAP)
}

pub fn initial_state_with_cap(n: usize, direction: SpinDirection, cap: usize) -> Result<SpinState> {
    check_size(n, cap)?;
    let scale = (0.5f64).powf(n as f64 / 2.0);
    let unit = match direction {
        SpinDirection::UpY => Complex64::new(0.0, 1.0),
        SpinDirection::DownY => Complex64::new(0.0, -1.0),
    };
    let powers: Vec<Complex64> = (0..=n).map(|k| unit.powu(k as u32) * scale).collect();
    let amplitudes = (0..1usize << n)
        .map(|s| powers[s.count_ones() as usize])
        .collect();
    Ok(SpinState { n, amplitudes })
}

/// Rejects spin counts that are zero, above `cap`, or above the hard cap.
pub fn check_size(n: usize, cap: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("at least one spin is required"));
    }
    let cap = cap.min(HARD_SPIN_CAP);
    if n > cap {
        return Err(Error::Resource {
            spins: n,
            cap,
            bytes: state_bytes(n),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_spin_up_y() {
        let s = initial_state(1, SpinDirection::UpY).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.amplitudes()[0] - Complex64::new(h, 0.0)).norm() < 1e-15);
        assert!((s.amplitudes()[1] - Complex64::new(0.0, h)).norm() < 1e-15);
    }

    #[test]
    fn polarised_states_have_unit_sigma_y_and_parity() {
        for n in 1..=6 {
            let up = initial_state(n, SpinDirection::UpY).unwrap();
            let down = initial_state(n, SpinDirection::DownY).unwrap();
            assert!((up.norm() - 1.0).abs() < 1e-14);
            for i in 0..n {
                assert!((up.sigma_y(i) - 1.0).abs() < 1e-12);
                assert!((down.sigma_y(i) + 1.0).abs() < 1e-12);
            }
            assert!((up.parity() - 1.0).norm() < 1e-12);
            let expect = if n % 2 == 0 { 1.0 } else { -1.0 };
            assert!((down.parity() - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn size_caps() {
        assert!(initial_state(0, SpinDirection::UpY).is_err());
        match initial_state(15, SpinDirection::UpY) {
            Err(Error::Resource { spins: 15, cap: 14, bytes }) => assert_eq!(bytes, 16 << 15),
            other => panic!("{other:?}"),
        }
        assert!(initial_state_with_cap(15, SpinDirection::UpY, 16).is_ok());
        assert!(matches!(
            initial_state_with_cap(21, SpinDirection::UpY, 40),
            Err(Error::Resource { cap: 20, .. })
        ));
    }

    #[test]
    fn snapshot_round_trip() {
        let s = initial_state(3, SpinDirection::DownY).unwrap();
        let mut buf = Vec::new();
        s.write_snapshot(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 16 * 8);
        assert_eq!(&buf[..4], b"KZSV");
        assert_eq!(SpinState::read_snapshot(buf.as_slice()).unwrap(), s);
        buf[0] = b'X';
        assert!(SpinState::read_snapshot(buf.as_slice()).is_err());
    }
}
