//! Damped least-squares (Levenberg-Marquardt) solver.
//!
//! Minimizes `sum_i r_i(beta)^2` for a user-supplied residual vector with
//! the step-damped update `beta' = beta - (J^T J + lambda I)^-1 J^T r`,
//! where `J` is the residual Jacobian. The damping follows the classic
//! schedule: divided by `lambda_decrease` after an accepted step, multiplied
//! by `lambda_increase` after a rejected one, so the accepted-cost sequence
//! is non-increasing by construction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nonlinear least-squares problem in residual form.
///
/// `residuals` returns `model - data`; an analytic Jacobian of that vector
/// may be supplied, otherwise central differences are used.
pub trait LeastSquaresProblem {
    /// Number of parameters.
    fn dim(&self) -> usize;

    /// Residual vector `r(beta) = t(beta) - data`.
    fn residuals(&self, beta: &[f64]) -> Result<Vec<f64>>;

    /// Analytic Jacobian `dr/dbeta`, row per residual, column per parameter.
    fn jacobian(&self, beta: &[f64]) -> Option<Result<DMatrix<f64>>> {
        let _ = beta;
        None
    }
}

/// Solver settings. Factors must exceed 1 and tolerances must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    /// Initial damping; `None` picks `1e-3 * mean(diag(J^T J))` at start.
    pub initial_lambda: Option<f64>,
    pub lambda_increase: f64,
    pub lambda_decrease: f64,
    pub max_iterations: usize,
    /// Converged when `|step| <= step_tol * (|beta| + step_tol)`.
    pub step_tol: f64,
    /// Converged when an accepted step reduces the cost by less than
    /// `cost_tol` relative to the previous cost.
    pub cost_tol: f64,
    /// Converged when `max|J^T r| <= gradient_tol`.
    pub gradient_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            initial_lambda: None,
            lambda_increase: 10.0,
            lambda_decrease: 10.0,
            max_iterations: 100,
            step_tol: 1e-10,
            cost_tol: 1e-12,
            gradient_tol: 1e-12,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.initial_lambda {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "initial damping must be finite and non-negative, got {l}"
                )));
            }
        }
        if !(self.lambda_increase > 1.0 && self.lambda_decrease > 1.0) {
            return Err(Error::InvalidParameter(
                "damping factors must be greater than 1".into(),
            ));
        }
        for (name, v) in [
            ("step_tol", self.step_tol),
            ("cost_tol", self.cost_tol),
            ("gradient_tol", self.gradient_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Step,
    Cost,
    MaxIterations,
    /// Damping grew without ever producing an acceptable step.
    Stalled,
}

/// Outcome of a solve; `params` is the best (last accepted) iterate even
/// when `converged` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub params: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Cost after each accepted step, starting with the initial cost;
    /// non-increasing by construction.
    pub cost_history: Vec<f64>,
}

/// Central-difference Jacobian with per-parameter step
/// `h_m = max(|beta_m|, 1) * 1e-6`.
pub fn numeric_jacobian<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    beta: &[f64],
) -> Result<DMatrix<f64>> {
    let n_m = problem.dim();
    assert_eq!(beta.len(), n_m, "parameter vector length mismatch");
    let mut work = beta.to_vec();
    let mut jac: Option<DMatrix<f64>> = None;
    for m in 0..n_m {
        let h = beta[m].abs().max(1.0) * 1e-6;
        work[m] = beta[m] + h;
        let plus = problem.residuals(&work)?;
        work[m] = beta[m] - h;
        let minus = problem.residuals(&work)?;
        work[m] = beta[m];
        if plus.iter().chain(minus.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResidual);
        }
        let col = jac.get_or_insert_with(|| DMatrix::zeros(plus.len(), n_m));
        if plus.len() != col.nrows() {
            return Err(Error::ShapeMismatch(
                "residual length changed between evaluations".into(),
            ));
        }
        for i in 0..plus.len() {
            col[(i, m)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac.ok_or_else(|| Error::InvalidParameter("problem has no parameters".into()))
}

fn jacobian_of<P: LeastSquaresProblem + ?Sized>(problem: &P, beta: &[f64]) -> Result<DMatrix<f64>> {
    match problem.jacobian(beta) {
        Some(j) => j,
        None => numeric_jacobian(problem, beta),
    }
}

/// One damped Gauss-Newton step from `beta` at damping `lambda`:
/// solves `(J^T J + lambda I) delta = -J^T r` by Cholesky factorization.
pub fn lm_step<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    beta: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    let jac = jacobian_of(problem, beta)?;
    let r = DVector::from_vec(problem.residuals(beta)?);
    let delta = solve_damped(&jac, &r, lambda)?;
    Ok(beta.iter().zip(delta.iter()).map(|(b, d)| b + d).collect())
}

fn solve_damped(jac: &DMatrix<f64>, r: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let mut jtj = jac.transpose() * jac;
    for i in 0..jtj.nrows() {
        jtj[(i, i)] += lambda;
    }
    let rhs = -(jac.transpose() * r);
    jtj.cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or(Error::SingularNormalEquations)
}

/// Iterate damped steps from `beta0` until a tolerance or the iteration cap
/// is hit. Non-convergence is reported in the result, not as an error.
pub fn lm_solve<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    beta0: &[f64],
    config: &LmConfig,
) -> Result<LmReport> {
    config.validate()?;
    if beta0.len() != problem.dim() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} parameters, got {}",
            problem.dim(),
            beta0.len()
        )));
    }
    if beta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "initial parameters must be finite".into(),
        ));
    }

    let mut beta = beta0.to_vec();
    let mut r = DVector::from_vec(problem.residuals(&beta)?);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteResidual);
    }
    let mut cost = r.norm_squared();
    let mut history = vec![cost];
    let mut lambda = config.initial_lambda;

    let finish = |beta: Vec<f64>,
                  cost: f64,
                  iterations: usize,
                  termination: Termination,
                  history: Vec<f64>| LmReport {
        params: beta,
        cost,
        iterations,
        converged: matches!(
            termination,
            Termination::Gradient | Termination::Step | Termination::Cost
        ),
        termination,
        cost_history: history,
    };

    for iter in 0..config.max_iterations {
        let jac = jacobian_of(problem, &beta)?;
        let g = jac.transpose() * &r;
        if g.amax() <= config.gradient_tol {
            return Ok(finish(beta, cost, iter, Termination::Gradient, history));
        }
        let lam = lambda.get_or_insert_with(|| {
            let diag_mean = (0..jac.ncols())
                .map(|m| jac.column(m).norm_squared())
                .sum::<f64>()
                / jac.ncols() as f64;
            if diag_mean > 0.0 {
                1e-3 * diag_mean
            } else {
                1e-3
            }
        });

        let mut rejections = 0usize;
        loop {
            match solve_damped(&jac, &r, *lam) {
                Ok(delta) => {
                    let candidate: Vec<f64> =
                        beta.iter().zip(delta.iter()).map(|(b, d)| b + d).collect();
                    let cand_r = DVector::from_vec(problem.residuals(&candidate)?);
                    let cand_cost = cand_r.norm_squared();
                    if cand_cost.is_finite() && cand_cost <= cost {
                        let step_norm = delta.norm();
                        let beta_norm = candidate.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let drop = cost - cand_cost;
                        beta = candidate;
                        r = cand_r;
                        cost = cand_cost;
                        history.push(cost);
                        *lam /= config.lambda_decrease;
                        if step_norm <= config.step_tol * (beta_norm + config.step_tol) {
                            return Ok(finish(beta, cost, iter + 1, Termination::Step, history));
                        }
                        if drop <= config.cost_tol * cost.max(f64::MIN_POSITIVE) {
                            return Ok(finish(beta, cost, iter + 1, Termination::Cost, history));
                        }
                        break;
                    }
                    *lam *= config.lambda_increase;
                    rejections += 1;
                }
                Err(Error::SingularNormalEquations) => {
                    *lam = (*lam * config.lambda_increase).max(f64::MIN_POSITIVE);
                    rejections += 1;
                }
                Err(e) => return Err(e),
            }
            if rejections > 100 || !lam.is_finite() {
                return Ok(finish(beta, cost, iter + 1, Termination::Stalled, history));
            }
        }
    }
    let iterations = config.max_iterations;
    Ok(finish(beta, cost, iterations, Termination::MaxIterations, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    /// r = M beta - c
    struct LinearProblem {
        m: DMatrix<f64>,
        c: DVector<f64>,
    }

    impl LeastSquaresProblem for LinearProblem {
        fn dim(&self) -> usize {
            self.m.ncols()
        }
        fn residuals(&self, beta: &[f64]) -> Result<Vec<f64>> {
            let b = DVector::from_column_slice(beta);
            Ok((&self.m * b - &self.c).iter().copied().collect())
        }
    }

    struct QuadProblem;
    impl LeastSquaresProblem for QuadProblem {
        fn dim(&self) -> usize {
            1
        }
        fn residuals(&self, beta: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![beta[0] * beta[0]])
        }
    }

    struct ConstProblem;
    impl LeastSquaresProblem for ConstProblem {
        fn dim(&self) -> usize {
            2
        }
        fn residuals(&self, _beta: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![3.0, -1.0])
        }
    }

    struct Rosenbrock;
    impl LeastSquaresProblem for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn residuals(&self, b: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![10.0 * (b[1] - b[0] * b[0]), 1.0 - b[0]])
        }
    }

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn numeric_jacobian_examples() {
        let m = rand_matrix(6, 3, 1);
        let p = LinearProblem {
            m: m.clone(),
            c: DVector::from_element(6, 0.5),
        };
        let j = numeric_jacobian(&p, &[0.3, -0.7, 1.1]).unwrap();
        assert!((j - &m).norm() / m.norm() < 1e-9);

        let jq = numeric_jacobian(&QuadProblem, &[3.0]).unwrap();
        assert_relative_eq!(jq[(0, 0)], 6.0, max_relative = 1e-6);

        let jc = numeric_jacobian(&ConstProblem, &[1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(jc.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn step_shrinks_with_damping() {
        let p = Rosenbrock;
        let beta = [-1.2, 1.0];
        let lambda = 0.5;
        let norm = |b: &[f64], l: f64| -> f64 {
            let next = lm_step(&p, b, l).unwrap();
            next.iter()
                .zip(b.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let base = norm(&beta, lambda);
        let damped = norm(&beta, lambda * 1e4);
        assert!(damped <= base / 10.0, "step {damped} vs {base}");
    }

    #[test]
    fn linear_problem_solved_in_one_undamped_step() {
        for seed in 0..5 {
            let m = rand_matrix(20, 5, 100 + seed);
            let c = DVector::from_fn(20, |i, _| (i as f64 * 0.37).sin());
            let p = LinearProblem { m: m.clone(), c: c.clone() };
            let beta = lm_step(&p, &[0.0; 5], 0.0).unwrap();
            // normal-equations oracle via LU
            let jtj = m.transpose() * &m;
            let oracle = jtj.lu().solve(&(m.transpose() * &c)).unwrap();
            for (a, b) in beta.iter().zip(oracle.iter()) {
                assert_relative_eq!(a, b, max_relative = 1e-8, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn orthonormal_jacobian_step_is_projected_residual() {
        // columns of an identity block are orthonormal
        let mut m = DMatrix::zeros(4, 2);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        let c = DVector::from_vec(vec![0.7, -0.3, 9.0, 9.0]);
        let p = LinearProblem { m: m.clone(), c: c.clone() };
        let beta0 = [0.0, 0.0];
        let next = lm_step(&p, &beta0, 0.0).unwrap();
        // residual toward the data is c - M beta0 = c; step = J^T (c - M beta0)
        let expected = m.transpose() * &c;
        // the Jacobian is taken by central differences, so roundoff ~1e-10
        for (a, b) in next.iter().zip(expected.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-8);
        }
    }

    #[test]
    fn already_optimal_terminates_immediately() {
        let m = rand_matrix(10, 3, 9);
        let c = &m * DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let p = LinearProblem { m, c };
        let report = lm_solve(&p, &[1.0, -2.0, 0.5], &LmConfig::default()).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 1);
        assert!(report.cost < 1e-20);
    }

    #[test]
    fn rosenbrock_converges_from_standard_start() {
        let cfg = LmConfig {
            max_iterations: 200,
            ..LmConfig::default()
        };
        let report = lm_solve(&Rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!(report.converged, "termination {:?}", report.termination);
        assert_abs_diff_eq!(report.params[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(report.params[1], 1.0, epsilon = 1e-6);
    }

    /// t_i = 1 + alpha cos(2 pi delta sigma_i - phi), fitting (alpha, delta, phi)
    /// with delta internally scaled to periodogram-bin units.
    struct SinusoidProblem {
        sigma: Vec<f64>,
        data: Vec<f64>,
        opd_scale: f64,
    }

    impl SinusoidProblem {
        fn model(&self, b: &[f64]) -> Vec<f64> {
            self.sigma
                .iter()
                .map(|&s| {
                    1.0 + b[0]
                        * (2.0 * std::f64::consts::PI * b[1] * self.opd_scale * s - b[2]).cos()
                })
                .collect()
        }
    }

    impl LeastSquaresProblem for SinusoidProblem {
        fn dim(&self) -> usize {
            3
        }
        fn residuals(&self, b: &[f64]) -> Result<Vec<f64>> {
            Ok(self
                .model(b)
                .iter()
                .zip(self.data.iter())
                .map(|(t, y)| t - y)
                .collect())
        }
    }

    #[test]
    fn sinusoid_self_fit_recovers_truth() {
        let n = 101;
        let sigma: Vec<f64> = (0..n).map(|i| 10000.0 + 100.0 * i as f64).collect();
        let mean_step = (sigma[n - 1] - sigma[0]) / n as f64;
        let bin = 1.0 / (2.0 * n as f64 * mean_step);
        let truth = (0.3, 2.0e-3, 0.4);
        let mut p = SinusoidProblem {
            sigma,
            data: vec![],
            opd_scale: bin,
        };
        p.data = p.model(&[truth.0, truth.1 / bin, truth.2]);
        let start = [0.25, (truth.1 + bin / 2.0) / bin, 0.0];
        let report = lm_solve(&p, &start, &LmConfig::default()).unwrap();
        assert!(report.converged);
        // (alpha, phi) and (-alpha, phi + pi) describe the same curve
        let (mut alpha, mut shift) = (report.params[0], report.params[2]);
        if alpha < 0.0 {
            alpha = -alpha;
            shift += std::f64::consts::PI;
        }
        let wrap = |x: f64| x.rem_euclid(2.0 * std::f64::consts::PI);
        assert_relative_eq!(alpha, truth.0, max_relative = 1e-8);
        assert_relative_eq!(report.params[1] * bin, truth.1, max_relative = 1e-8);
        assert_relative_eq!(wrap(shift), wrap(truth.2), max_relative = 1e-6);
    }

    #[test]
    fn accepted_costs_are_monotone() {
        let cfg = LmConfig {
            max_iterations: 300,
            ..LmConfig::default()
        };
        let report = lm_solve(&Rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!(report.cost_history.len() >= 2);
        for pair in report.cost_history.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
    }

    #[test]
    fn nonconvergence_is_reported_not_raised() {
        let cfg = LmConfig {
            max_iterations: 2,
            ..LmConfig::default()
        };
        let report = lm_solve(&Rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!(!report.converged);
        assert_eq!(report.termination, Termination::MaxIterations);
        assert_eq!(report.iterations, 2);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = LmConfig::default();
        cfg.lambda_increase = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = LmConfig::default();
        cfg.step_tol = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = LmConfig::default();
        cfg.initial_lambda = Some(-1.0);
        assert!(cfg.validate().is_err());
    }
}
