use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use super::likelihood::{sweep, Evaluation, RiskSetIndex};
use super::robust::robust_clustered_variance;
use super::{FitError, SurvivalData};

/// Coefficients beyond this magnitude are treated as a diverging (monotone) likelihood.
const DIVERGENCE_BOUND: f64 = 20.0;
/// Max-norm of the score required at a converged solution.
const SCORE_TOL: f64 = 1e-6;
/// A converged fit whose next Newton step still moves a coefficient by this
/// fraction of `max(1, |beta|)` is drifting towards infinity.
const DRIFT_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Relative change in log partial likelihood that ends the iteration.
    pub convergence_tol: f64,
    /// Diagonal inflation applied only when the information matrix is singular.
    pub ridge_fallback: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { max_iterations: 50, convergence_tol: 1e-9, ridge_fallback: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Inverse information at the solution.
    pub model_covariance: DMatrix<f64>,
    /// Clustered sandwich covariance.
    pub robust_covariance: DMatrix<f64>,
    pub log_partial_likelihood: f64,
    pub score_max_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the information matrix had to be ridge-inflated to invert.
    pub ridge_applied: bool,
    pub n_events: usize,
}

impl FitResult {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn model_se(&self, i: usize) -> f64 {
        self.model_covariance[(i, i)].max(0.0).sqrt()
    }

    pub fn robust_se(&self, i: usize) -> f64 {
        self.robust_covariance[(i, i)].max(0.0).sqrt()
    }

    /// Robust standard error of `sum_k weights[k] * beta_k`.
    pub fn robust_se_of(&self, weights: &[f64]) -> f64 {
        let w = DVector::from_column_slice(weights);
        (w.transpose() * &self.robust_covariance * &w)[(0, 0)].max(0.0).sqrt()
    }

    pub fn require_converged(self) -> Result<Self, FitError> {
        if self.converged {
            Ok(self)
        } else {
            Err(FitError::NotConverged { iterations: self.iterations })
        }
    }
}

/// Cholesky inverse of the information matrix, ridge-inflated if singular.
fn invert(info: &[f64], p: usize, ridge: f64) -> Result<(DMatrix<f64>, bool), FitError> {
    let m = DMatrix::from_row_slice(p, p, info);
    if let Some(ch) = m.clone().cholesky() {
        return Ok((ch.inverse(), false));
    }
    let scale = (0..p).map(|i| m[(i, i)].abs()).fold(1.0, f64::max);
    let inflated = m + DMatrix::identity(p, p) * (ridge * scale);
    inflated.cholesky().map(|ch| (ch.inverse(), true)).ok_or(FitError::Singular)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maximizes the partial likelihood by Newton-Raphson from zero, halving any
/// step that lowers the likelihood.
pub fn fit(data: &SurvivalData, config: &FitConfig) -> Result<FitResult, FitError> {
    let p = data.dim();
    if p == 0 {
        return Err(FitError::EmptyDesign);
    }
    if data.n_events() == 0 {
        return Err(FitError::NoEvents);
    }
    let index = RiskSetIndex::new(data);
    let eval = |beta: &[f64]| -> Evaluation { sweep(data, &index, beta, false).evaluation };

    let mut beta = vec![0.0; p];
    let mut current = eval(&beta);
    let mut ridge_applied = false;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations.max(1) {
        iterations += 1;
        let (inverse, ridged) = invert(&current.information, p, config.ridge_fallback)?;
        ridge_applied |= ridged;
        let step = inverse * DVector::from_column_slice(&current.score);

        let floor = current.log_likelihood - 1e-12 * current.log_likelihood.abs().max(1.0);
        let mut scale = 1.0;
        let (candidate, next) = loop {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let ev = eval(&cand);
            if ev.log_likelihood.is_finite() && ev.log_likelihood >= floor {
                break (cand, ev);
            }
            scale *= 0.5;
            if scale < 1e-10 {
                break (beta.clone(), current.clone());
            }
        };

        let change = (next.log_likelihood - current.log_likelihood).abs() / current.log_likelihood.abs().max(1.0);
        beta = candidate;
        current = next;

        if let Some(k) = (0..p).find(|&k| beta[k].abs() > DIVERGENCE_BOUND) {
            return Err(FitError::MonotoneLikelihood { covariate: data.names()[k].clone(), value: beta[k] });
        }
        if change < config.convergence_tol && max_abs(&current.score) < SCORE_TOL {
            converged = true;
            break;
        }
    }

    let (model_covariance, ridged) = invert(&current.information, p, config.ridge_fallback)?;
    if converged {
        let step = &model_covariance * DVector::from_column_slice(&current.score);
        if let Some(k) = (0..p).find(|&k| step[k].abs() > DRIFT_TOL * beta[k].abs().max(1.0)) {
            return Err(FitError::MonotoneLikelihood { covariate: data.names()[k].clone(), value: beta[k] });
        }
    }
    let mut result = FitResult {
        names: data.names().to_vec(),
        coefficients: beta,
        model_covariance,
        robust_covariance: DMatrix::zeros(p, p),
        log_partial_likelihood: current.log_likelihood,
        score_max_norm: max_abs(&current.score),
        iterations,
        converged,
        ridge_applied: ridge_applied || ridged,
        n_events: data.n_events(),
    };
    result.robust_covariance = robust_clustered_variance(data, &result)?;
    Ok(result)
}

/// `exp(b -/+ z * se)` for a two-sided interval at `level`.
pub fn wald_interval(estimate: f64, se: f64, level: f64) -> (f64, f64) {
    let z = if level == 0.95 {
        crate::Z_975
    } else {
        Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0)
    };
    ((estimate - z * se).exp(), (estimate + z * se).exp())
}

/// Hazard-ratio interval for one coefficient from its robust standard error.
pub fn wald_ci(fit: &FitResult, index: usize, level: f64) -> (f64, f64) {
    wald_interval(fit.coefficients[index], fit.robust_se(index), level)
}
