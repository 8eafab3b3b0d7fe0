//! Score residuals and the clustered sandwich variance.
//!
//! Row `i` contributes
//! `U_i = dN_i (x_i - xbar(stop_i)) - r_i * sum_{t_j in (start_i, stop_i]} (x_i - xbar_j) d_j / S0_j`,
//! and the rows of a cluster are summed before forming the meat `sum_c U_c U_c'`.

use nalgebra::DMatrix;

use super::likelihood::{linear_predictor, sweep, RiskSetIndex};
use super::{FitError, FitResult, SurvivalData};

/// Per-row score residuals at `beta`, row-major `n x p`.
pub fn score_residuals(data: &SurvivalData, beta: &[f64]) -> Result<Vec<f64>, FitError> {
    if beta.len() != data.dim() {
        return Err(FitError::DimensionMismatch { expected: data.dim(), got: beta.len() });
    }
    let p = data.dim();
    let index = RiskSetIndex::new(data);
    let sw = sweep(data, &index, beta, true);
    let times = &sw.event_times;

    // Prefix sums over ascending event times of d/S0 and d*xbar/S0.
    let mut cum0 = vec![0.0; times.len() + 1];
    let mut cum1 = vec![0.0; (times.len() + 1) * p];
    for (k, et) in times.iter().enumerate() {
        let w = et.deaths / et.s0;
        cum0[k + 1] = cum0[k] + w;
        for a in 0..p {
            cum1[(k + 1) * p + a] = cum1[k * p + a] + w * et.xbar[a];
        }
    }
    let eta = linear_predictor(data, beta);
    let mut out = vec![0.0; data.len() * p];
    for i in 0..data.len() {
        let x = data.row(i);
        let lo = times.partition_point(|et| et.time <= data.start()[i]);
        let hi = times.partition_point(|et| et.time <= data.stop()[i]);
        let r = (eta[i] - sw.shift).exp();
        let c0 = cum0[hi] - cum0[lo];
        let u = &mut out[i * p..(i + 1) * p];
        for a in 0..p {
            let c1 = cum1[hi * p + a] - cum1[lo * p + a];
            u[a] = -r * (x[a] * c0 - c1);
        }
        if data.event()[i] {
            let et = &times[hi - 1];
            debug_assert_eq!(et.time, data.stop()[i]);
            for a in 0..p {
                u[a] += x[a] - et.xbar[a];
            }
        }
    }
    Ok(out)
}

/// Sums score residuals within clusters and returns the sandwich
/// `A^-1 B A^-1`, where `A^-1` is the fit's model-based covariance.
pub fn robust_clustered_variance(data: &SurvivalData, fit: &FitResult) -> Result<DMatrix<f64>, FitError> {
    let p = data.dim();
    let resid = score_residuals(data, &fit.coefficients)?;
    let n_clusters = data.cluster().iter().copied().max().map_or(0, |m| m + 1);
    let mut totals = vec![0.0; n_clusters * p];
    for (i, &c) in data.cluster().iter().enumerate() {
        for a in 0..p {
            totals[c * p + a] += resid[i * p + a];
        }
    }
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for c in 0..n_clusters {
        let u = &totals[c * p..(c + 1) * p];
        for a in 0..p {
            for b in 0..p {
                meat[(a, b)] += u[a] * u[b];
            }
        }
    }
    let bread = &fit.model_covariance;
    let v = bread * meat * bread;
    Ok((&v + v.transpose()) * 0.5)
}
