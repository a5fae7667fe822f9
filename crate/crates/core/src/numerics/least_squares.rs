//! Nonlinear least squares backed by the `levenberg-marquardt` crate.
//!
//! Callers describe a model through [`ResidualModel`]; the Jacobian falls
//! back to central differences when a model does not supply one.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DMatrix, DVector, Dyn};

pub trait ResidualModel {
    fn n_residuals(&self) -> usize;

    /// Writes residuals for parameters `p`. Returns `false` when `p` is
    /// outside the model's domain.
    fn residuals(&self, p: &[f64], out: &mut [f64]) -> bool;

    /// Writes the `n_residuals × p.len()` Jacobian. Central differences by default.
    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) -> bool {
        finite_difference_jacobian(self, p, out)
    }
}

pub fn finite_difference_jacobian<M: ResidualModel + ?Sized>(
    model: &M,
    p: &[f64],
    out: &mut DMatrix<f64>,
) -> bool {
    let m = model.n_residuals();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(1e-3);
        q[j] = p[j] + h;
        if !model.residuals(&q, &mut plus) {
            return false;
        }
        q[j] = p[j] - h;
        if !model.residuals(&q, &mut minus) {
            return false;
        }
        q[j] = p[j];
        for i in 0..m {
            out[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    true
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    /// Relative tolerance on the objective and on the parameter step.
    pub tol: f64,
    /// Maximum evaluations, as a multiple of `(n_params + 1)`.
    pub patience: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            tol: 1e-10,
            patience: 400,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub termination: String,
}

const OUT_OF_DOMAIN: f64 = 1e100;

struct Problem<'a, M: ResidualModel + ?Sized> {
    model: &'a M,
    p: DVector<f64>,
}

impl<M: ResidualModel + ?Sized> LeastSquaresProblem<f64, Dyn, Dyn> for Problem<'_, M> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.p.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let mut r = DVector::zeros(self.model.n_residuals());
        let ok = self.model.residuals(self.p.as_slice(), r.as_mut_slice());
        if !ok || r.iter().any(|v| !v.is_finite()) {
            // Out-of-domain trial step: a huge residual makes the step rejected.
            r.fill(OUT_OF_DOMAIN);
        }
        Some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.model.n_residuals(), self.p.len());
        let ok = self.model.jacobian(self.p.as_slice(), &mut j);
        (ok && j.iter().all(|v| v.is_finite())).then_some(j)
    }
}

/// Minimises `Σ r_i(p)²` from the starting point `p0`.
pub fn minimize<M: ResidualModel + ?Sized>(model: &M, p0: &[f64], opts: LmOptions) -> LmOutcome {
    let problem = Problem {
        model,
        p: DVector::from_column_slice(p0),
    };
    let (problem, report) = LevenbergMarquardt::new()
        .with_ftol(opts.tol)
        .with_xtol(opts.tol)
        .with_gtol(opts.tol)
        .with_patience(opts.patience)
        .minimize(problem);
    let params = problem.p.as_slice().to_vec();
    let mut residuals = vec![0.0; model.n_residuals()];
    let valid = model.residuals(&params, &mut residuals) && residuals.iter().all(|r| r.is_finite());
    let mut jacobian = DMatrix::zeros(model.n_residuals(), params.len());
    let jac_ok = valid && model.jacobian(&params, &mut jacobian);
    let cost = residuals.iter().map(|r| r * r).sum::<f64>();
    LmOutcome {
        converged: report.termination.was_successful() && jac_ok && cost.is_finite(),
        termination: format!("{:?}", report.termination),
        evaluations: report.number_of_evaluations,
        params,
        residuals,
        jacobian,
        cost,
    }
}

/// `(JᵀJ)⁻¹` from a residual Jacobian already scaled by the inverse
/// measurement errors. `None` when the normal matrix is numerically singular.
pub fn covariance(jacobian: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let normal = jacobian.transpose() * jacobian;
    let n = normal.nrows();
    // Equilibrate so the rank test is insensitive to parameter units.
    let scale: Vec<f64> = (0..n)
        .map(|k| {
            let d = normal[(k, k)];
            if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }
        })
        .collect();
    if scale.contains(&0.0) {
        return None;
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| normal[(i, j)] * scale[i] * scale[j]);
    let svd = scaled.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-14 {
        return None;
    }
    let inv = scaled.try_inverse()?;
    Some(DMatrix::from_fn(n, n, |i, j| inv[(i, j)] * scale[i] * scale[j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Exponential {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl ResidualModel for Exponential {
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) -> bool {
            for (k, (x, y)) in self.x.iter().zip(&self.y).enumerate() {
                out[k] = p[0] * (-x / p[1]).exp() - y;
            }
            true
        }
    }

    #[test]
    fn fits_an_exponential_exactly() {
        let x: Vec<f64> = (1..=8).map(f64::from).collect();
        let y = x.iter().map(|x| 2.5 * (-x / 3.0).exp()).collect();
        let out = minimize(&Exponential { x, y }, &[1.0, 1.0], LmOptions::default());
        assert!(out.converged, "{}", out.termination);
        assert!((out.params[0] - 2.5).abs() < 1e-8);
        assert!((out.params[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn singular_normal_matrix_has_no_covariance() {
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(covariance(&j).is_none());
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
        let c = covariance(&j).unwrap();
        let expect = (j.transpose() * &j).try_inverse().unwrap();
        assert!((c - expect).abs().max() < 1e-12);
    }
}
