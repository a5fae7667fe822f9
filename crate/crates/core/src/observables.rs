//! Defect density, connected σx correlations and correlation lengths, from
//! exact states or from projective shots with independent readout flips.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::SpinState;
use crate::numerics::least_squares::{covariance, minimize, LmOptions, ResidualModel};
use crate::numerics::logspace;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotBasis {
    X,
    Y,
    Z,
}

impl ShotBasis {
    pub fn label(self) -> &'static str {
        match self {
            ShotBasis::X => "x",
            ShotBasis::Y => "y",
            ShotBasis::Z => "z",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "x" => Some(ShotBasis::X),
            "y" => Some(ShotBasis::Y),
            "z" => Some(ShotBasis::Z),
            _ => None,
        }
    }
}

/// Projective readout with independent per-ion bit flips.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeasurementModel {
    pub shots: usize,
    /// ε ∈ [0, 0.5].
    pub flip_prob: f64,
    pub rng_seed: u64,
}

impl MeasurementModel {
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::invalid("at least one shot is required"));
        }
        if !(0.0..=0.5).contains(&self.flip_prob) {
            return Err(Error::invalid("flip probability must lie in [0, 0.5]"));
        }
        Ok(())
    }
}

/// Single-shot outcomes. Bit `i` of a shot is set when ion `i` read `-1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShotSet {
    pub basis: ShotBasis,
    n: usize,
    shots: Vec<u64>,
}

impl ShotSet {
    pub fn new(basis: ShotBasis, n: usize, shots: Vec<u64>) -> Result<Self> {
        if n == 0 || n > 64 {
            return Err(Error::invalid("shot records hold between 1 and 64 ions"));
        }
        if n < 64 && shots.iter().any(|s| s >> n != 0) {
            return Err(Error::invalid("shot record has bits beyond the ion count"));
        }
        Ok(ShotSet { basis, n, shots })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn records(&self) -> &[u64] {
        &self.shots
    }

    /// `±1` outcome of `ion` in shot `k`.
    pub fn outcome(&self, k: usize, ion: usize) -> i8 {
        if self.shots[k] >> ion & 1 == 1 {
            -1
        } else {
            1
        }
    }

    /// Header `# basis=<b> N=<n> shots=<m>`, then one row of `±1` per shot.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# basis={} N={} shots={}", self.basis.label(), self.n, self.len())?;
        let mut line = String::with_capacity(3 * self.n);
        for k in 0..self.len() {
            line.clear();
            for i in 0..self.n {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(if self.outcome(k, i) == 1 { "1" } else { "-1" });
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut header: Option<(ShotBasis, usize, usize)> = None;
        let mut shots = Vec::new();
        for (k, line) in input.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            let bad = |m: String| Error::MalformedData { line: k + 1, message: m };
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                if header.is_none() {
                    header = Some(parse_shot_header(rest).ok_or_else(|| bad("malformed shot header".into()))?);
                }
                continue;
            }
            let (_, n, _) = header.ok_or_else(|| bad("data before the '# basis=' header".into()))?;
            let mut record = 0u64;
            let mut count = 0;
            for (i, field) in t.split(',').enumerate() {
                match field.trim() {
                    "1" | "+1" => {}
                    "-1" => {
                        if i < 64 {
                            record |= 1 << i;
                        }
                    }
                    other => return Err(bad(format!("outcome '{other}' is not ±1"))),
                }
                count += 1;
            }
            if count != n {
                return Err(bad(format!("row has {count} outcomes, expected {n}")));
            }
            shots.push(record);
        }
        let (basis, n, m) = header.ok_or(Error::MalformedData {
            line: 1,
            message: "missing '# basis=' header".into(),
        })?;
        if shots.len() != m {
            return Err(Error::MalformedData {
                line: 1,
                message: format!("header announces {m} shots, file has {}", shots.len()),
            });
        }
        ShotSet::new(basis, n, shots)
    }
}

fn parse_shot_header(rest: &str) -> Option<(ShotBasis, usize, usize)> {
    let (mut basis, mut n, mut m) = (None, None, None);
    for token in rest.split_whitespace() {
        let (key, value) = token.split_once('=')?;
        match key {
            "basis" => basis = ShotBasis::parse(value),
            "N" => n = value.parse().ok(),
            "shots" => m = value.parse().ok(),
            _ => {}
        }
    }
    Some((basis?, n?, m?))
}

/// Outcome probabilities after rotating every spin into `basis`; index bit
/// set means outcome `-1`.
pub fn basis_probabilities(state: &SpinState, basis: ShotBasis) -> Vec<f64> {
    match basis {
        ShotBasis::Z => state.amplitudes().iter().map(|a| a.norm_sqr()).collect(),
        ShotBasis::X => state.x_probabilities(),
        ShotBasis::Y => {
            let mut v = state.amplitudes().to_vec();
            let h = std::f64::consts::FRAC_1_SQRT_2;
            let i = num_complex::Complex64::new(0.0, 1.0);
            let mut m = 1;
            while m < v.len() {
                for block in v.chunks_mut(2 * m) {
                    let (lo, hi) = block.split_at_mut(m);
                    for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                        // ⟨±y| = (⟨0| ∓ i⟨1|)/√2.
                        let (x, y) = (*a, *b);
                        *a = (x - i * y) * h;
                        *b = (x + i * y) * h;
                    }
                }
                m *= 2;
            }
            v.iter().map(|a| a.norm_sqr()).collect()
        }
    }
}

/// Draws `model.shots` records. Shot `k` uses its own ChaCha8 stream, so the
/// result depends only on the seed.
pub fn sample_measurements(state: &SpinState, basis: ShotBasis, model: &MeasurementModel) -> Result<ShotSet> {
    model.validate()?;
    let n = state.n();
    let probs = basis_probabilities(state, basis);
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    let eps = model.flip_prob;
    let shots: Vec<u64> = (0..model.shots)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(model.rng_seed);
            rng.set_stream(k as u64);
            let u = rng.random::<f64>() * total;
            let mut s = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1) as u64;
            if eps > 0.0 {
                for i in 0..n {
                    if rng.random::<f64>() < eps {
                        s ^= 1 << i;
                    }
                }
            }
            s
        })
        .collect();
    ShotSet::new(basis, n, shots)
}

/// One- and two-point σx moments.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinStatistics {
    /// `⟨σx^i⟩`.
    pub magnetization: Vec<f64>,
    /// `⟨σx^i σx^j⟩`, unit diagonal.
    pub correlation: DMatrix<f64>,
}

impl SpinStatistics {
    pub fn n(&self) -> usize {
        self.magnetization.len()
    }

    pub fn from_state(state: &SpinState) -> Self {
        Self::from_weighted(state.n(), state.x_probabilities().iter().copied().enumerate().map(|(s, p)| (s as u64, p)))
    }

    /// Sample means over x-basis shots.
    pub fn from_shots(shots: &ShotSet) -> Result<Self> {
        if shots.basis != ShotBasis::X {
            return Err(Error::invalid("σx statistics need x-basis shots"));
        }
        if shots.is_empty() {
            return Err(Error::invalid("no shots"));
        }
        let w = 1.0 / shots.len() as f64;
        Ok(Self::from_weighted(shots.n(), shots.records().iter().map(|&s| (s, w))))
    }

    fn from_weighted(n: usize, items: impl Iterator<Item = (u64, f64)>) -> Self {
        let mut m = vec![0.0; n];
        let mut c = DMatrix::zeros(n, n);
        for (s, p) in items {
            if p == 0.0 {
                continue;
            }
            for i in 0..n {
                let zi = if s >> i & 1 == 0 { p } else { -p };
                m[i] += zi;
                for j in (i + 1)..n {
                    let same = (s >> i ^ s >> j) & 1 == 0;
                    c[(i, j)] += if same { p } else { -p };
                }
            }
        }
        for i in 0..n {
            c[(i, i)] = 1.0;
            for j in (i + 1)..n {
                c[(j, i)] = c[(i, j)];
            }
        }
        SpinStatistics {
            magnetization: m,
            correlation: c,
        }
    }

    /// Connected correlator `⟨σx^i σx^j⟩ - ⟨σx^i⟩⟨σx^j⟩`.
    pub fn connected(&self, i: usize, j: usize) -> f64 {
        self.correlation[(i, j)] - self.magnetization[i] * self.magnetization[j]
    }
}

/// Either an exact state or a set of x-basis shots.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    State(&'a SpinState),
    Shots(&'a ShotSet),
}

impl<'a> From<&'a SpinState> for Source<'a> {
    fn from(s: &'a SpinState) -> Self {
        Source::State(s)
    }
}

impl<'a> From<&'a ShotSet> for Source<'a> {
    fn from(s: &'a ShotSet) -> Self {
        Source::Shots(s)
    }
}

impl Source<'_> {
    pub fn n(&self) -> usize {
        match self {
            Source::State(s) => s.n(),
            Source::Shots(s) => s.n(),
        }
    }

    fn statistics(&self) -> Result<SpinStatistics> {
        match self {
            Source::State(s) => Ok(SpinStatistics::from_state(s)),
            Source::Shots(s) => SpinStatistics::from_shots(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DefectDensity {
    pub rho: f64,
    /// Zero for exact states; standard error of the per-shot mean otherwise.
    pub stderr: f64,
}

/// `ρ = (1/(2(N-1))) Σ_i (1 - ⟨σx^i σx^{i+1}⟩)`.
pub fn defect_density<'a>(source: impl Into<Source<'a>>) -> Result<DefectDensity> {
    let source = source.into();
    let n = source.n();
    if n < 2 {
        return Err(Error::invalid("defect density needs at least 2 ions"));
    }
    match source {
        Source::State(_) => {
            let st = source.statistics()?;
            let sum: f64 = (0..n - 1).map(|i| 1.0 - st.correlation[(i, i + 1)]).sum();
            Ok(DefectDensity {
                rho: sum / (2.0 * (n - 1) as f64),
                stderr: 0.0,
            })
        }
        Source::Shots(shots) => {
            if shots.basis != ShotBasis::X {
                return Err(Error::invalid("defect density needs x-basis shots"));
            }
            let m = shots.len();
            if m == 0 {
                return Err(Error::invalid("no shots"));
            }
            let bonds = (1u64 << (n - 1)) - 1;
            let per_shot: Vec<f64> = shots
                .records()
                .iter()
                .map(|&s| ((s ^ (s >> 1)) & bonds).count_ones() as f64 / (n - 1) as f64)
                .collect();
            let mean = per_shot.iter().sum::<f64>() / m as f64;
            let var = if m > 1 {
                per_shot.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64
            } else {
                0.0
            };
            Ok(DefectDensity {
                rho: mean,
                stderr: (var / m as f64).sqrt(),
            })
        }
    }
}

/// Ions dropped from each end of an `n`-ion chain before correlations are
/// averaged.
pub fn edge_discard_for(n: usize) -> usize {
    match n {
        13 => 1,
        36 | 40 => 4,
        55 | 61 => 8,
        _ => (0.13 * n as f64).round() as usize,
    }
}

/// Distance-averaged connected correlations over the kept ions.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorrelationProfile {
    /// `1..=r_max`.
    pub distances: Vec<usize>,
    pub g: Vec<f64>,
    pub pair_counts: Vec<usize>,
    /// Zero for exact states; bootstrap standard deviation for shots.
    pub stderr: Vec<f64>,
    /// First and last kept ion (inclusive).
    pub kept_range: (usize, usize),
}

impl CorrelationProfile {
    pub fn kept(&self) -> usize {
        self.kept_range.1 - self.kept_range.0 + 1
    }

    pub fn r_max(&self) -> usize {
        self.distances.last().copied().unwrap_or(0)
    }

    /// `G(r)` at distance `r`, if present.
    pub fn at(&self, r: usize) -> Option<f64> {
        self.distances.iter().position(|&d| d == r).map(|k| self.g[k])
    }

    /// CSV `r,G,N_r,stderr`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "r,G,N_r,stderr")?;
        for k in 0..self.distances.len() {
            writeln!(
                out,
                "{},{:e},{},{:e}",
                self.distances[k], self.g[k], self.pair_counts[k], self.stderr[k]
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProfileOptions {
    pub edge_discard: usize,
    /// Largest distance; `None` means `floor(kept / 2)`.
    pub r_max: Option<usize>,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl ProfileOptions {
    pub fn with_discard(edge_discard: usize) -> Self {
        ProfileOptions {
            edge_discard,
            r_max: None,
            bootstrap_resamples: 200,
            bootstrap_seed: 0x5eed,
        }
    }
}

/// `G(r)` with `edge_discard` ions removed from each end.
pub fn correlation_profile<'a>(source: impl Into<Source<'a>>, edge_discard: usize) -> Result<CorrelationProfile> {
    correlation_profile_with(source, ProfileOptions::with_discard(edge_discard))
}

pub fn correlation_profile_with<'a>(source: impl Into<Source<'a>>, opts: ProfileOptions) -> Result<CorrelationProfile> {
    let source = source.into();
    let n = source.n();
    let d = opts.edge_discard;
    if n < 2 * d + 3 {
        return Err(Error::invalid(format!(
            "{n} ions with {d} discarded per end leaves fewer than 3"
        )));
    }
    let (first, last) = (d, n - 1 - d);
    let kept = last - first + 1;
    let r_max = opts.r_max.unwrap_or(kept / 2).clamp(1, kept - 1);
    let stats = source.statistics()?;
    let g_of = |st: &SpinStatistics| -> Vec<f64> {
        (1..=r_max)
            .map(|r| {
                let s: f64 = (first..=last - r).map(|i| st.connected(i, i + r)).sum();
                s / (kept - r) as f64
            })
            .collect()
    };
    let g = g_of(&stats);
    let stderr = match source {
        Source::Shots(shots) if opts.bootstrap_resamples > 1 => {
            let m = shots.len();
            let reps: Vec<Vec<f64>> = (0..opts.bootstrap_resamples)
                .into_par_iter()
                .map(|b| {
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.bootstrap_seed);
                    rng.set_stream(b as u64);
                    let w = 1.0 / m as f64;
                    let pick = (0..m).map(|_| (shots.records()[rng.random_range(0..m)], w));
                    g_of(&SpinStatistics::from_weighted(n, pick))
                })
                .collect();
            (0..r_max)
                .map(|k| {
                    let mean = reps.iter().map(|r| r[k]).sum::<f64>() / reps.len() as f64;
                    let var = reps.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (reps.len() - 1) as f64;
                    var.sqrt()
                })
                .collect()
        }
        _ => vec![0.0; r_max],
    };
    Ok(CorrelationProfile {
        distances: (1..=r_max).collect(),
        g,
        pair_counts: (1..=r_max).map(|r| kept - r).collect(),
        stderr,
        kept_range: (first, last),
    })
}

/// `G(r) ≈ A e^{-r/R} + B`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorrLengthFit {
    pub a: f64,
    pub b: f64,
    /// Correlation length in ion spacings.
    pub r: f64,
    /// `None` when the fit has no residual degrees of freedom.
    pub r_err: Option<f64>,
    pub a_err: Option<f64>,
    pub b_err: Option<f64>,
    pub r_range: (usize, usize),
    /// Weighted sum of squared residuals.
    pub chi2: f64,
    /// `R` exceeds ten times the largest fitted distance.
    pub unresolved: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CorrLengthOptions {
    /// Inclusive distance range; `None` uses every distance in the profile.
    pub r_range: Option<(usize, usize)>,
    pub lm: LmOptions,
}

struct ExpModel {
    r: Vec<f64>,
    g: Vec<f64>,
    w: Vec<f64>,
}

impl ExpModel {
    /// Best `(A, B, cost)` for a fixed length by weighted linear least squares.
    fn linear(&self, len: f64) -> Option<(f64, f64, f64)> {
        let (mut see, mut se, mut s1, mut seg, mut sg) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..self.r.len() {
            let w2 = self.w[k] * self.w[k];
            let e = (-self.r[k] / len).exp();
            see += w2 * e * e;
            se += w2 * e;
            s1 += w2;
            seg += w2 * e * self.g[k];
            sg += w2 * self.g[k];
        }
        let det = see * s1 - se * se;
        if !(det.abs() > 1e-300) {
            return None;
        }
        let a = (seg * s1 - se * sg) / det;
        let b = (see * sg - se * seg) / det;
        let cost = (0..self.r.len())
            .map(|k| (self.w[k] * (a * (-self.r[k] / len).exp() + b - self.g[k])).powi(2))
            .sum();
        Some((a, b, cost))
    }
}

impl ResidualModel for ExpModel {
    fn n_residuals(&self) -> usize {
        self.r.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) -> bool {
        let len = p[2].exp();
        for (o, ((r, g), w)) in out.iter_mut().zip(self.r.iter().zip(&self.g).zip(&self.w)) {
            *o = w * (p[0] * (-r / len).exp() + p[1] - g);
        }
        len.is_finite() && len > 0.0
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) -> bool {
        let len = p[2].exp();
        for k in 0..self.r.len() {
            let e = (-self.r[k] / len).exp();
            out[(k, 0)] = self.w[k] * e;
            out[(k, 1)] = self.w[k];
            out[(k, 2)] = self.w[k] * p[0] * e * self.r[k] / len;
        }
        len.is_finite() && len > 0.0
    }
}

/// Weighted fit with residual weights `√N_r`.
pub fn fit_correlation_length(profile: &CorrelationProfile) -> Result<CorrLengthFit> {
    fit_correlation_length_with(profile, CorrLengthOptions::default())
}

pub fn fit_correlation_length_with(profile: &CorrelationProfile, opts: CorrLengthOptions) -> Result<CorrLengthFit> {
    let (lo, hi) = opts
        .r_range
        .unwrap_or((1, profile.distances.last().copied().unwrap_or(0)));
    let idx: Vec<usize> = (0..profile.distances.len())
        .filter(|&k| (lo..=hi).contains(&profile.distances[k]))
        .collect();
    if idx.len() < 3 {
        return Err(Error::invalid("correlation-length fit needs at least 3 distances"));
    }
    let model = ExpModel {
        r: idx.iter().map(|&k| profile.distances[k] as f64).collect(),
        g: idx.iter().map(|&k| profile.g[k]).collect(),
        w: idx.iter().map(|&k| (profile.pair_counts[k] as f64).sqrt()).collect(),
    };
    if model.g.iter().any(|g| !g.is_finite()) || model.w.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::invalid("profile has non-finite values or empty distances"));
    }
    let r_used = (profile.distances[idx[0]], profile.distances[*idx.last().unwrap()]);
    let r_top = r_used.1 as f64;
    let (gmin, gmax) = model
        .g
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &g| (a.min(g), b.max(g)));
    if gmax - gmin <= 1e-12 * gmax.abs().max(gmin.abs()).max(1e-300) {
        return Err(Error::Degenerate("constant correlation profile has no decay length".into()));
    }

    // Starting point: scan the length with A and B solved linearly.
    let mut start = None;
    for len in logspace(0.05, 1e3 * r_top, 240) {
        if let Some((a, b, cost)) = model.linear(len) {
            if start.is_none_or(|(_, _, _, c)| cost < c) {
                start = Some((a, b, len, cost));
            }
        }
    }
    let (a0, b0, len0, _) = start.ok_or_else(|| Error::Degenerate("no admissible starting length".into()))?;
    let out = minimize(&model, &[a0, b0, len0.ln()], opts.lm);
    if !out.converged {
        return Err(Error::NonConvergence {
            what: "correlation-length fit",
            iterations: out.evaluations,
            residual: out.cost.sqrt(),
            best: vec![out.params[0], out.params[1], out.params[2].exp()],
        });
    }
    let (a, b, len) = (out.params[0], out.params[1], out.params[2].exp());
    let cov = covariance(&out.jacobian).ok_or_else(|| {
        Error::Degenerate(format!("correlation length unidentifiable (best R = {len:.3e})"))
    })?;
    let dof = model.r.len() - 3;
    let err = |k: usize, scale: f64| (dof > 0).then(|| (cov[(k, k)] * out.cost / dof as f64).sqrt() * scale);
    Ok(CorrLengthFit {
        a,
        b,
        r: len,
        r_err: err(2, len),
        a_err: err(0, 1.0),
        b_err: err(1, 1.0),
        r_range: r_used,
        chi2: out.cost,
        unresolved: len > 10.0 * r_top,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{initial_state, SpinDirection};
    use num_complex::Complex64;

    fn x_product(signs: &[i8]) -> SpinState {
        // |+x⟩ = (|0⟩+|1⟩)/√2, |−x⟩ = (|0⟩−|1⟩)/√2.
        let n = signs.len();
        let amps = (0..1usize << n)
            .map(|s| {
                let mut a = (0.5f64).powf(n as f64 / 2.0);
                for (i, &g) in signs.iter().enumerate() {
                    if g < 0 && s >> i & 1 == 1 {
                        a = -a;
                    }
                }
                Complex64::new(a, 0.0)
            })
            .collect();
        SpinState::from_amplitudes(n, amps).unwrap()
    }

    pub(crate) fn ghz_x(n: usize) -> SpinState {
        let plus = x_product(&vec![1; n]);
        let minus = x_product(&vec![-1; n]);
        let amps = plus
            .amplitudes()
            .iter()
            .zip(minus.amplitudes())
            .map(|(a, b)| (a + b) * std::f64::consts::FRAC_1_SQRT_2)
            .collect();
        SpinState::from_amplitudes(n, amps).unwrap()
    }

    #[test]
    fn defect_density_reference_states() {
        assert!(defect_density(&x_product(&[1, 1])).unwrap().rho.abs() < 1e-14);
        let up = initial_state(2, SpinDirection::UpY).unwrap();
        assert!((defect_density(&up).unwrap().rho - 0.5).abs() < 1e-14);
        let neel = x_product(&[1, -1, 1, -1, 1]);
        assert!((defect_density(&neel).unwrap().rho - 1.0).abs() < 1e-14);
        assert!(defect_density(&initial_state(1, SpinDirection::UpY).unwrap()).is_err());
    }

    #[test]
    fn profiles_of_reference_states() {
        let up = initial_state(7, SpinDirection::UpY).unwrap();
        let p = correlation_profile(&up, 0).unwrap();
        assert!(p.g.iter().all(|g| g.abs() < 1e-12));
        let ghz = ghz_x(6);
        let p = correlation_profile(&ghz, 0).unwrap();
        assert_eq!(p.distances, vec![1, 2, 3]);
        assert!(p.g.iter().all(|g| (g - 1.0).abs() < 1e-12));
    }

    #[test]
    fn thirteen_ion_pair_counts() {
        let s = initial_state(13, SpinDirection::UpY).unwrap();
        let p = correlation_profile(&s, edge_discard_for(13)).unwrap();
        assert_eq!(p.kept(), 11);
        assert_eq!(p.kept_range, (1, 11));
        assert_eq!(&p.pair_counts[..2], &[10, 9]);
        assert_eq!(p.r_max(), 5);
        assert!(correlation_profile(&s, 5).is_ok());
        assert!(correlation_profile(&s, 6).is_err());
    }

    #[test]
    fn discard_table() {
        let got: Vec<usize> = [13, 36, 40, 55, 61, 20].iter().map(|&n| edge_discard_for(n)).collect();
        assert_eq!(got, vec![1, 4, 4, 8, 8, 3]);
    }

    fn synthetic(a: f64, len: f64, b: f64, rmax: usize) -> CorrelationProfile {
        let distances: Vec<usize> = (1..=rmax).collect();
        CorrelationProfile {
            g: distances.iter().map(|&r| a * (-(r as f64) / len).exp() + b).collect(),
            pair_counts: distances.iter().map(|&r| 2 * rmax + 1 - r).collect(),
            stderr: vec![0.0; rmax],
            kept_range: (0, 2 * rmax),
            distances,
        }
    }

    #[test]
    fn exact_exponential_profile() {
        let f = fit_correlation_length(&synthetic(0.8, 3.0, 0.01, 6)).unwrap();
        assert!((f.r - 3.0).abs() < 1e-6, "{f:?}");
        assert!((f.a - 0.8).abs() < 1e-6 && (f.b - 0.01).abs() < 1e-6);
        assert!(!f.unresolved);
    }

    #[test]
    fn constant_profile_is_never_a_silent_fit() {
        let p = synthetic(0.0, 1.0, 0.3, 6);
        match fit_correlation_length(&p) {
            Err(_) => {}
            Ok(f) => assert!(f.unresolved, "{f:?}"),
        }
    }

    #[test]
    fn shot_file_round_trip_and_errors() {
        let set = ShotSet::new(ShotBasis::X, 3, vec![0b000, 0b101, 0b010]).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# basis=x N=3 shots=3\n1,1,1\n-1,1,-1\n"));
        assert_eq!(ShotSet::read_csv(text.as_bytes()).unwrap(), set);
        let short = "# basis=x N=3 shots=1\n1,1\n";
        match ShotSet::read_csv(short.as_bytes()) {
            Err(Error::MalformedData { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let ghz = ghz_x(4);
        let m = MeasurementModel {
            shots: 500,
            flip_prob: 0.05,
            rng_seed: 9,
        };
        let a = sample_measurements(&ghz, ShotBasis::X, &m).unwrap();
        let b = sample_measurements(&ghz, ShotBasis::X, &m).unwrap();
        assert_eq!(a, b);
        let c = sample_measurements(&ghz, ShotBasis::X, &MeasurementModel { rng_seed: 10, ..m }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn y_basis_readout_of_polarised_state() {
        let up = initial_state(3, SpinDirection::UpY).unwrap();
        let p = basis_probabilities(&up, ShotBasis::Y);
        assert!((p[0] - 1.0).abs() < 1e-14);
        let down = initial_state(3, SpinDirection::DownY).unwrap();
        assert!((basis_probabilities(&down, ShotBasis::Y)[7] - 1.0).abs() < 1e-14);
    }
}
