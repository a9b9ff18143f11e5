//! Agreement between predicted scores and MOS: SRCC, KRCC, PLCC and RMSE,
//! with optional 4-parameter logistic mapping before PLCC/RMSE.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("correlation undefined for constant input")]
    Constant,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("fold {fold}: missing predictions for {missing:?}; unexpected predictions for {extra:?}")]
    Coverage {
        fold: usize,
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("stimulus `{0}` has no MOS")]
    MissingMos(String),
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFew { need: 2, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean(i+1..=j)
        let rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

/// Spearman rank-order correlation (Pearson over average ranks).
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_pair(x, y)?;
    if is_constant(x) || is_constant(y) {
        return Err(MetricsError::Constant);
    }
    Ok(pearson_unchecked(&average_ranks(x), &average_ranks(y)))
}

/// Kendall tau-b, O(n log n) via merge-sort inversion counting.
pub fn krcc(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_pair(x, y)?;
    if is_constant(x) || is_constant(y) {
        return Err(MetricsError::Constant);
    }
    let n = x.len() as u64;
    let n0 = n * (n - 1) / 2;

    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        x[a].partial_cmp(&x[b])
            .unwrap_or(Ordering::Equal)
            .then(y[a].partial_cmp(&y[b]).unwrap_or(Ordering::Equal))
    });

    // Pairs tied in x, and tied in both.
    let mut n1 = 0u64;
    let mut n3 = 0u64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let t = (j - i) as u64;
        n1 += t * (t - 1) / 2;
        let mut a = i;
        while a < j {
            let mut b = a + 1;
            while b < j && y[idx[b]] == y[idx[a]] {
                b += 1;
            }
            let u = (b - a) as u64;
            n3 += u * (u - 1) / 2;
            a = b;
        }
        i = j;
    }

    // Discordant pairs = inversions of y in x-order (ties in x are sorted by y,
    // so contribute none).
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = ys.clone();
    let swaps = merge_count(&mut ys, &mut buf);

    let mut n2 = 0u64;
    let mut i = 0;
    while i < ys.len() {
        let mut j = i + 1;
        while j < ys.len() && ys[j] == ys[i] {
            j += 1;
        }
        let u = (j - i) as u64;
        n2 += u * (u - 1) / 2;
        i = j;
    }

    let concordant_minus_discordant =
        n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok((concordant_minus_discordant / denom).clamp(-1.0, 1.0))
}

// Sorts `v` ascending, returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

/// Pearson linear correlation on raw values.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_pair(x, y)?;
    if is_constant(x) || is_constant(y) {
        return Err(MetricsError::Constant);
    }
    Ok(pearson_unchecked(x, y))
}

pub fn rmse_raw(pred: &[f64], mos: &[f64]) -> Result<f64, MetricsError> {
    check_pair(pred, mos)?;
    let sse: f64 = pred.iter().zip(mos).map(|(p, m)| (p - m).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Parameters of `f(s) = b1 * (1/2 - 1/(1 + exp(b2 * (s - b3)))) + b4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum LogisticMap {
    Logistic { beta: [f64; 4] },
    /// Small-slope limit of the logistic family, `f(s) = slope * s + intercept`.
    Affine { slope: f64, intercept: f64 },
    Identity,
}

impl LogisticMap {
    pub fn apply(&self, s: f64) -> f64 {
        match *self {
            LogisticMap::Logistic { beta: [b1, b2, b3, b4] } => logistic(b1, b2, b3, b4, s),
            LogisticMap::Affine { slope, intercept } => slope * s + intercept,
            LogisticMap::Identity => s,
        }
    }

    /// Equivalent 4-parameter vector, when one exists.
    pub fn params(&self) -> Option<[f64; 4]> {
        match *self {
            LogisticMap::Logistic { beta } => Some(beta),
            _ => None,
        }
    }
}

fn logistic(b1: f64, b2: f64, b3: f64, b4: f64, s: f64) -> f64 {
    b1 * (0.5 - 1.0 / (1.0 + (b2 * (s - b3)).exp())) + b4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub map: LogisticMap,
    pub mapped: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the fit failed and the identity mapping was used instead.
    pub fallback_warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when the relative SSE decrease of an accepted step falls below this.
    pub tolerance: f64,
    /// Also stop when the SSE improved by less than `stall_tolerance`
    /// (relative) over the last `stall_window` accepted steps. Data whose
    /// best logistic lies at a boundary of the family (saturating
    /// exponential or straight line) otherwise crawl along a flat valley
    /// forever.
    pub stall_window: usize,
    pub stall_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-12,
            stall_window: 25,
            stall_tolerance: 1e-4,
        }
    }
}

fn sse_of(map: &LogisticMap, pred: &[f64], mos: &[f64]) -> f64 {
    pred.iter()
        .zip(mos)
        .map(|(&p, &m)| (map.apply(p) - m).powi(2))
        .sum()
}

fn affine_least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn logistic_fit(pred: &[f64], mos: &[f64]) -> Result<LogisticFit, MetricsError> {
    logistic_fit_with(pred, mos, FitOptions::default())
}

/// Least-squares fit of the 4-parameter logistic by Levenberg-Marquardt.
///
/// The affine limit of the family (b2 -> 0 with b1*b2/4 fixed) is also
/// evaluated; the lower-SSE candidate is returned. On non-convergence the
/// identity map is used and `fallback_warning` is set.
pub fn logistic_fit_with(
    pred: &[f64],
    mos: &[f64],
    opts: FitOptions,
) -> Result<LogisticFit, MetricsError> {
    check_pair(pred, mos)?;
    if pred.len() < 5 {
        return Err(MetricsError::TooFew {
            need: 5,
            got: pred.len(),
        });
    }
    if is_constant(pred) {
        return Err(MetricsError::Constant);
    }

    let (pmin, pmax) = pred
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (mmin, mmax) = mos
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let pspread = (pmax - pmin).max(f64::EPSILON);
    let mut beta = Vector4::new(
        (mmax - mmin).max(1e-3) * 1.5,
        4.0 / pspread,
        mean(pred),
        mean(mos),
    );
    // Orientation of the initial curve follows the sign of the linear trend.
    let (slope, _) = affine_least_squares(pred, mos);
    if slope < 0.0 {
        beta[0] = -beta[0];
    }

    let residuals = |b: &Vector4<f64>| -> Vec<f64> {
        pred.iter()
            .zip(mos)
            .map(|(&s, &m)| logistic(b[0], b[1], b[2], b[3], s) - m)
            .collect()
    };
    let sse = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();

    let mut r = residuals(&beta);
    let mut cost = sse(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut history = std::collections::VecDeque::with_capacity(opts.stall_window + 1);
    history.push_back(cost);

    while iterations < opts.max_iterations {
        iterations += 1;
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (&s, &ri) in pred.iter().zip(&r) {
            let e = (beta[1] * (s - beta[2])).exp();
            let (sig, dsig) = if e.is_finite() {
                let sig = 1.0 / (1.0 + e);
                (sig, e / (1.0 + e).powi(2))
            } else {
                (0.0, 0.0)
            };
            let g = Vector4::new(
                0.5 - sig,
                beta[0] * dsig * (s - beta[2]),
                -beta[0] * dsig * beta[1],
                1.0,
            );
            jtj += g * g.transpose();
            jtr += g * ri;
        }
        if jtr.amax() < 1e-15 * (1.0 + cost) {
            converged = true;
            break;
        }

        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj;
            for d in 0..4 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = beta + step;
            let rc = residuals(&candidate);
            let cc = sse(&rc);
            if cc.is_finite() && cc <= cost {
                let rel = (cost - cc) / cost.max(f64::MIN_POSITIVE);
                let tiny_step = step.norm() <= 1e-12 * (beta.norm() + 1e-12);
                beta = candidate;
                r = rc;
                cost = cc;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                history.push_back(cost);
                if history.len() > opts.stall_window {
                    let old = history.pop_front().unwrap_or(cost);
                    if (old - cost) <= opts.stall_tolerance * old.max(f64::MIN_POSITIVE) {
                        converged = true;
                    }
                }
                if rel < opts.tolerance || tiny_step {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        // No downhill step at any damping: at a (local) minimum.
        if !accepted {
            converged = true;
        }
        if converged {
            break;
        }
    }

    let (slope, intercept) = affine_least_squares(pred, mos);
    let affine_map = LogisticMap::Affine { slope, intercept };
    let affine_sse = sse_of(&affine_map, pred, mos);
    let finite = beta.iter().all(|v| v.is_finite());
    // Iterates that keep creeping toward the affine limit never meet the
    // stopping rule; when the limit is already at least as good, it is the
    // least-squares answer.
    let drifting_to_affine = finite && affine_sse <= cost * (1.0 + 1e-9);
    if !(converged && finite) && !drifting_to_affine {
        return Ok(LogisticFit {
            map: LogisticMap::Identity,
            mapped: pred.to_vec(),
            converged: false,
            iterations,
            fallback_warning: Some(format!(
                "logistic fit did not converge after {iterations} iterations; identity mapping used"
            )),
        });
    }

    let logistic_map = LogisticMap::Logistic {
        beta: [beta[0], beta[1], beta[2], beta[3]],
    };
    let map = if !converged || affine_sse < sse_of(&logistic_map, pred, mos) {
        affine_map
    } else {
        logistic_map
    };
    Ok(LogisticFit {
        mapped: pred.iter().map(|&s| map.apply(s)).collect(),
        map,
        converged: true,
        iterations,
        fallback_warning: None,
    })
}

/// PLCC, on logistic-mapped predictions when `fitted`.
pub fn plcc(pred: &[f64], mos: &[f64], fitted: bool) -> Result<f64, MetricsError> {
    if fitted {
        let fit = logistic_fit(pred, mos)?;
        pearson(&fit.mapped, mos)
    } else {
        pearson(pred, mos)
    }
}

/// RMSE, on logistic-mapped predictions when `fitted`.
pub fn rmse(pred: &[f64], mos: &[f64], fitted: bool) -> Result<f64, MetricsError> {
    if fitted {
        let fit = logistic_fit(pred, mos)?;
        rmse_raw(&fit.mapped, mos)
    } else {
        rmse_raw(pred, mos)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub srcc: f64,
    pub plcc: f64,
    pub krcc: f64,
    pub rmse: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logistic: Option<LogisticMap>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl MetricReport {
    pub fn logistic_params(&self) -> Option<[f64; 4]> {
        self.logistic.as_ref().and_then(LogisticMap::params)
    }
}

/// All four metrics for one prediction set.
pub fn compute_report(pred: &[f64], mos: &[f64], fitted: bool) -> Result<MetricReport, MetricsError> {
    let s = srcc(pred, mos)?;
    let k = krcc(pred, mos)?;
    if fitted {
        let fit = logistic_fit(pred, mos)?;
        Ok(MetricReport {
            srcc: s,
            krcc: k,
            plcc: pearson(&fit.mapped, mos).or_else(|e| match e {
                // A mapping can flatten a nearly constant prediction.
                MetricsError::Constant => Ok(0.0),
                other => Err(other),
            })?,
            rmse: rmse_raw(&fit.mapped, mos)?,
            n: pred.len(),
            logistic: Some(fit.map),
            warning: fit.fallback_warning,
        })
    } else {
        Ok(MetricReport {
            srcc: s,
            krcc: k,
            plcc: pearson(pred, mos)?,
            rmse: rmse_raw(pred, mos)?,
            n: pred.len(),
            logistic: None,
            warning: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub report: MetricReport,
}

/// Fold-averaged metrics plus the per-fold breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub mean: MetricReport,
    pub folds: Vec<FoldMetrics>,
    pub fitted: bool,
}

/// Evaluate held-out predictions fold by fold.
///
/// `fold_members[f]` is the set of stimulus ids in fold f; `predictions[f]`
/// must cover exactly that set.
pub fn evaluate_folds(
    predictions: &[BTreeMap<String, f64>],
    mos: &BTreeMap<String, f64>,
    fold_members: &[BTreeSet<String>],
    fitted: bool,
) -> Result<CrossValidationReport, MetricsError> {
    if predictions.len() != fold_members.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), fold_members.len()));
    }
    for (fold, (pred, members)) in predictions.iter().zip(fold_members).enumerate() {
        let keys: BTreeSet<&String> = pred.keys().collect();
        let missing: Vec<String> = members.iter().filter(|m| !keys.contains(m)).cloned().collect();
        let extra: Vec<String> = pred.keys().filter(|k| !members.contains(*k)).cloned().collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(MetricsError::Coverage { fold, missing, extra });
        }
    }

    let folds = predictions
        .par_iter()
        .enumerate()
        .map(|(fold, pred)| {
            let mut p = Vec::with_capacity(pred.len());
            let mut m = Vec::with_capacity(pred.len());
            for (id, &v) in pred {
                p.push(v);
                m.push(*mos.get(id).ok_or_else(|| MetricsError::MissingMos(id.clone()))?);
            }
            Ok(FoldMetrics {
                fold,
                report: compute_report(&p, &m, fitted)?,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;

    let k = folds.len() as f64;
    let avg = |f: fn(&MetricReport) -> f64| folds.iter().map(|x| f(&x.report)).sum::<f64>() / k;
    let warnings: Vec<String> = folds
        .iter()
        .filter_map(|f| f.report.warning.as_ref().map(|w| format!("fold {}: {w}", f.fold)))
        .collect();
    let mean = MetricReport {
        srcc: avg(|r| r.srcc),
        plcc: avg(|r| r.plcc),
        krcc: avg(|r| r.krcc),
        rmse: avg(|r| r.rmse),
        n: folds.iter().map(|f| f.report.n).sum(),
        logistic: None,
        warning: (!warnings.is_empty()).then(|| warnings.join("; ")),
    };
    Ok(CrossValidationReport { mean, folds, fitted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn srcc_examples() {
        assert_eq!(srcc(&[1., 2., 3.], &[10., 20., 30.]).unwrap(), 1.0);
        assert_eq!(srcc(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0);
        // d = [0, 1, -1, 0] -> 1 - 6*2/(4*15) = 0.8
        assert_abs_diff_eq!(srcc(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap(), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn krcc_examples() {
        assert_abs_diff_eq!(krcc(&[1., 2., 3.], &[1., 3., 2.]).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(krcc(&[1., 2., 3.], &[1., 2., 3.]).unwrap(), 1.0);
        assert_eq!(krcc(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0);
    }

    #[test]
    fn constant_input_rejected() {
        assert_eq!(srcc(&[1., 1., 1.], &[1., 2., 3.]), Err(MetricsError::Constant));
        assert_eq!(krcc(&[1., 2., 3.], &[2., 2., 2.]), Err(MetricsError::Constant));
        assert_eq!(
            logistic_fit(&[1.; 6], &[1., 2., 3., 4., 5., 6.]).unwrap_err(),
            MetricsError::Constant
        );
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[10., 20., 20., 5.]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn plcc_rmse_examples() {
        let mos = [1.0, 2.5, 3.0, 4.2, 0.7, 3.3];
        assert_abs_diff_eq!(plcc(&mos, &mos, true).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rmse(&mos, &mos, true).unwrap(), 0.0, epsilon = 1e-9);
        let neg: Vec<f64> = mos.iter().map(|m| -m).collect();
        assert_abs_diff_eq!(plcc(&neg, &mos, false).unwrap(), -1.0, epsilon = 1e-12);
        let shifted: Vec<f64> = mos.iter().map(|m| m + 1.0).collect();
        assert_abs_diff_eq!(rmse(&shifted, &mos, false).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn logistic_identity_residual() {
        let mos: Vec<f64> = (0..20).map(|i| 0.25 * i as f64).collect();
        let fit = logistic_fit(&mos, &mos).unwrap();
        assert!(rmse_raw(&fit.mapped, &mos).unwrap() < 1e-6);
    }

    #[test]
    fn logistic_recovers_sigmoid() {
        let beta = [4.0, 1.5, 2.0, 2.5];
        let pred: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let mos: Vec<f64> = pred
            .iter()
            .map(|&s| logistic(beta[0], beta[1], beta[2], beta[3], s))
            .collect();
        let fit = logistic_fit(&pred, &mos).unwrap();
        assert!(fit.converged);
        assert!(rmse_raw(&fit.mapped, &mos).unwrap() < 1e-6);
        assert!(matches!(fit.map, LogisticMap::Logistic { .. }));
    }

    #[test]
    fn too_few_for_fit() {
        assert!(matches!(
            logistic_fit(&[1., 2., 3.], &[1., 2., 3.]),
            Err(MetricsError::TooFew { need: 5, got: 3 })
        ));
    }

    #[test]
    fn coverage_error_lists_ids() {
        let mos: BTreeMap<String, f64> = [("a".into(), 1.0), ("b".into(), 2.0), ("c".into(), 3.0)].into();
        let members = vec![BTreeSet::from(["a".to_string(), "b".to_string()])];
        let preds = vec![BTreeMap::from([("a".to_string(), 1.0), ("c".to_string(), 3.0)])];
        match evaluate_folds(&preds, &mos, &members, false) {
            Err(MetricsError::Coverage { fold, missing, extra }) => {
                assert_eq!(fold, 0);
                assert_eq!(missing, vec!["b"]);
                assert_eq!(extra, vec!["c"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
