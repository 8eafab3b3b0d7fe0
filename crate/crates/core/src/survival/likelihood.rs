use super::{FitError, SurvivalData};

/// Log partial likelihood with its first two derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub log_likelihood: f64,
    pub score: Vec<f64>,
    /// Negative Hessian, row-major `p x p`.
    pub information: Vec<f64>,
}

/// Risk-set aggregates at one distinct event time.
#[derive(Debug, Clone)]
pub(crate) struct EventTime {
    pub time: f64,
    /// Number of events at this time.
    pub deaths: f64,
    /// Sum of relative risks over the risk set, scaled by `exp(-shift)`.
    pub s0: f64,
    pub xbar: Vec<f64>,
}

/// Row orderings reused across evaluations of one design.
pub(crate) struct RiskSetIndex {
    /// Distinct event times, descending, with the rows having an event there.
    groups: Vec<(f64, Vec<usize>)>,
    by_stop_desc: Vec<usize>,
    by_start_desc: Vec<usize>,
}

impl RiskSetIndex {
    pub fn new(data: &SurvivalData) -> Self {
        let n = data.len();
        let mut events: Vec<usize> = (0..n).filter(|&i| data.event[i]).collect();
        events.sort_by(|&a, &b| data.stop[b].total_cmp(&data.stop[a]));
        let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
        for i in events {
            match groups.last_mut() {
                Some((t, rows)) if *t == data.stop[i] => rows.push(i),
                _ => groups.push((data.stop[i], vec![i])),
            }
        }
        let mut by_stop_desc: Vec<usize> = (0..n).collect();
        by_stop_desc.sort_by(|&a, &b| data.stop[b].total_cmp(&data.stop[a]));
        let mut by_start_desc: Vec<usize> = (0..n).collect();
        by_start_desc.sort_by(|&a, &b| data.start[b].total_cmp(&data.start[a]));
        RiskSetIndex { groups, by_stop_desc, by_start_desc }
    }
}

pub(crate) struct Sweep {
    pub evaluation: Evaluation,
    /// Ascending in time.
    pub event_times: Vec<EventTime>,
    pub shift: f64,
}

pub(crate) fn linear_predictor(data: &SurvivalData, beta: &[f64]) -> Vec<f64> {
    (0..data.len())
        .map(|i| data.row(i).iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect()
}

/// One backward pass over event times. Rows enter the risk set once
/// `t <= stop` and leave once `t <= start`.
pub(crate) fn sweep(data: &SurvivalData, index: &RiskSetIndex, beta: &[f64], keep_times: bool) -> Sweep {
    let n = data.len();
    let p = data.dim();
    let eta = linear_predictor(data, beta);
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let risk: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();

    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = vec![0.0; p * p];
    let update = |i: usize, sign: f64, s0: &mut f64, s1: &mut [f64], s2: &mut [f64]| {
        let r = sign * risk[i];
        let x = data.row(i);
        *s0 += r;
        for a in 0..p {
            let rxa = r * x[a];
            s1[a] += rxa;
            for b in 0..=a {
                s2[a * p + b] += rxa * x[b];
            }
        }
    };

    let mut ll = 0.0;
    let mut score = vec![0.0; p];
    let mut info = vec![0.0; p * p];
    let mut times = Vec::with_capacity(if keep_times { index.groups.len() } else { 0 });
    let (mut ia, mut ir) = (0, 0);
    for (t, rows) in &index.groups {
        while ia < n && data.stop[index.by_stop_desc[ia]] >= *t {
            update(index.by_stop_desc[ia], 1.0, &mut s0, &mut s1, &mut s2);
            ia += 1;
        }
        while ir < n && data.start[index.by_start_desc[ir]] >= *t {
            update(index.by_start_desc[ir], -1.0, &mut s0, &mut s1, &mut s2);
            ir += 1;
        }
        let d = rows.len() as f64;
        let xbar: Vec<f64> = s1.iter().map(|v| v / s0).collect();
        for &i in rows {
            ll += eta[i];
            for (sc, x) in score.iter_mut().zip(data.row(i)) {
                *sc += x;
            }
        }
        ll -= d * (shift + s0.ln());
        for a in 0..p {
            score[a] -= d * xbar[a];
            for b in 0..=a {
                info[a * p + b] += d * (s2[a * p + b] / s0 - xbar[a] * xbar[b]);
            }
        }
        if keep_times {
            times.push(EventTime { time: *t, deaths: d, s0, xbar });
        }
    }
    for a in 0..p {
        for b in 0..a {
            info[b * p + a] = info[a * p + b];
        }
    }
    times.reverse();
    Sweep { evaluation: Evaluation { log_likelihood: ll, score, information: info }, event_times: times, shift }
}

fn check_beta(data: &SurvivalData, beta: &[f64]) -> Result<(), FitError> {
    if beta.len() != data.dim() {
        return Err(FitError::DimensionMismatch { expected: data.dim(), got: beta.len() });
    }
    Ok(())
}

/// Log partial likelihood, score and information at `beta`.
pub fn evaluate(data: &SurvivalData, beta: &[f64]) -> Result<Evaluation, FitError> {
    check_beta(data, beta)?;
    Ok(sweep(data, &RiskSetIndex::new(data), beta, false).evaluation)
}

/// Breslow log partial likelihood:
/// sum over event rows of `eta_i - log(sum over risk set of exp(eta_k))`.
pub fn log_partial_likelihood(data: &SurvivalData, beta: &[f64]) -> Result<f64, FitError> {
    evaluate(data, beta).map(|e| e.log_likelihood)
}
