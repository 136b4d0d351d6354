use nalgebra::{Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use super::correlation::{mean_std, pearson};
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 500;
const TOLERANCE: f64 = 1e-10;

/// `b1 (1/2 - 1/(1 + exp(b2 (x - b3)))) + b4 x + b5`
pub fn logistic5(b: &[f64; 5], x: f64) -> f64 {
    b[0] * (0.5 - sigmoid_neg(b[1] * (x - b[2]))) + b[3] * x + b[4]
}

/// `1 / (1 + exp(z))` without overflow.
fn sigmoid_neg(z: f64) -> f64 {
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub params: [f64; 5],
    pub sse: f64,
    pub iterations: usize,
    /// False when the iteration budget ran out before convergence.
    pub converged: bool,
}

impl LogisticFit {
    pub fn apply(&self, x: f64) -> f64 {
        logistic5(&self.params, x)
    }
}

fn sse(b: &[f64; 5], x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&xi, &yi)| (yi - logistic5(b, xi)).powi(2)).sum()
}

fn levenberg_marquardt(start: [f64; 5], x: &[f64], y: &[f64]) -> LogisticFit {
    let mut b = start;
    let mut cost = sse(&b, x, y);
    let mut lambda = 1e-3;
    for it in 0..MAX_ITERATIONS {
        let mut jtj = Matrix5::<f64>::zeros();
        let mut jtr = Vector5::<f64>::zeros();
        for (&xi, &yi) in x.iter().zip(y) {
            let s = sigmoid_neg(b[1] * (xi - b[2]));
            let ds = s * (1.0 - s);
            let j = Vector5::new(0.5 - s, b[0] * ds * (xi - b[2]), -b[0] * ds * b[1], xi, 1.0);
            jtj += j * j.transpose();
            jtr += j * (yi - logistic5(&b, xi));
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for d in 0..5 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: [f64; 5] = std::array::from_fn(|k| b[k] + delta[k]);
            let trial_cost = sse(&trial, x, y);
            if trial_cost.is_finite() && trial_cost <= cost {
                let change = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                b = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if change < TOLERANCE || cost == 0.0 {
                    return LogisticFit {
                        params: b,
                        sse: cost,
                        iterations: it + 1,
                        converged: true,
                    };
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No damping level reduces the cost: a local minimum.
            return LogisticFit {
                params: b,
                sse: cost,
                iterations: it + 1,
                converged: true,
            };
        }
    }
    LogisticFit {
        params: b,
        sse: cost,
        iterations: MAX_ITERATIONS,
        converged: false,
    }
}

/// Least-squares five-parameter logistic mapping from `pred` to `subj`.
///
/// Two starts are refined and the lower-cost result kept: the logistic start
/// (`b1` = range of `subj`, `b2` = 1/std of `pred`, `b3` = mean of `pred`,
/// `b4`, `b5` from a straight-line fit) and the same start with `b1 = 0`,
/// which is never worse than the straight line itself.
pub fn fit_logistic5(pred: &[f64], subj: &[f64]) -> Result<LogisticFit> {
    if pred.len() != subj.len() {
        return Err(Error::dim("prediction and subjective lists differ in length"));
    }
    if pred.len() < 5 {
        return Err(Error::usage(format!(
            "logistic fit needs at least 5 points, got {}",
            pred.len()
        )));
    }
    if pred.iter().chain(subj).any(|v| !v.is_finite()) {
        return Err(Error::numeric("scores must be finite"));
    }
    let (mx, sx) = mean_std(pred);
    let (my, _) = mean_std(subj);
    if sx == 0.0 {
        return Err(Error::numeric("logistic fit of constant predictions is undefined"));
    }
    let cov: f64 = pred.iter().zip(subj).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / pred.len() as f64;
    let slope = cov / (sx * sx);
    let intercept = my - slope * mx;
    let range =
        subj.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - subj.iter().cloned().fold(f64::INFINITY, f64::min);

    let a = levenberg_marquardt([range, 1.0 / sx, mx, slope, intercept], pred, subj);
    let b = levenberg_marquardt([0.0, 1.0 / sx, mx, slope, intercept], pred, subj);
    Ok(if b.sse < a.sse { b } else { a })
}

/// Correlation and error after the logistic mapping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappedAgreement {
    pub plcc: f64,
    pub rmse: f64,
    pub fit: LogisticFit,
}

pub fn plcc_rmse(pred: &[f64], subj: &[f64]) -> Result<MappedAgreement> {
    let fit = fit_logistic5(pred, subj)?;
    let mapped: Vec<f64> = pred.iter().map(|&x| fit.apply(x)).collect();
    let plcc = pearson(&mapped, subj)?;
    let rmse = (fit.sse / pred.len() as f64).sqrt();
    Ok(MappedAgreement { plcc, rmse, fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_configuration() {
        for x in [-3.0, 0.0, 0.7, 12.0] {
            assert_eq!(logistic5(&[0.0, 1.0, 0.0, 1.0, 0.0], x), x);
        }
        assert_eq!(sigmoid_neg(800.0), 0.0);
        assert_eq!(sigmoid_neg(-800.0), 1.0);
    }

    #[test]
    fn linear_data_fits_exactly() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.37 - 2.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let m = plcc_rmse(&x, &y).unwrap();
        assert!((m.plcc - 1.0).abs() < 1e-9);
        assert!(m.rmse < 1e-6);
    }

    #[test]
    fn recovers_generating_curve() {
        let truth = [30.0, 0.8, 5.0, 0.5, 10.0];
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.25).collect();
        let y: Vec<f64> = x.iter().map(|&v| logistic5(&truth, v)).collect();
        let fit = fit_logistic5(&x, &y).unwrap();
        let rms = (x
            .iter()
            .map(|&v| (fit.apply(v) - logistic5(&truth, v)).powi(2))
            .sum::<f64>()
            / x.len() as f64)
            .sqrt();
        assert!(rms < 1e-6, "rms {rms} params {:?}", fit.params);
    }

    #[test]
    fn errors() {
        assert!(fit_logistic5(&[1.0; 4], &[1.0; 4]).is_err());
        assert!(matches!(
            fit_logistic5(&[1.0; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            Err(Error::Numeric(_))
        ));
    }
}
