//! Curve fitting: ordinary linear regression and a small dense
//! Levenberg-Marquardt solver for the Lorentzian and Rabi models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    pub residual_rms: f64,
}

/// Unweighted least-squares line through `(x, y)`.
///
/// Standard errors come from the residual scatter, so an exact fit reports
/// zero uncertainty.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::InvalidConfig("linear fit needs at least two matching points".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|xi| (xi - mx) * (xi - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Singular);
    }
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let r = yi - (intercept + slope * xi);
            r * r
        })
        .sum();
    let dof = (n as f64 - 2.0).max(1.0);
    let s2 = ss_res / dof;
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr: (s2 / sxx).sqrt(),
        intercept_stderr: (s2 * (1.0 / nf + mx * mx / sxx)).sqrt(),
        residual_rms: (ss_res / nf).sqrt(),
    })
}

/// A model `y = f(x; params)` with an analytic or numeric Jacobian.
pub trait Model {
    fn eval(&self, x: f64, params: &[f64]) -> f64;

    /// Partial derivatives with respect to each parameter at `x`.
    fn gradient(&self, x: f64, params: &[f64], out: &mut [f64]) {
        let mut p = params.to_vec();
        for (k, slot) in out.iter_mut().enumerate() {
            let h = 1e-7 * params[k].abs().max(1e-12);
            p[k] = params[k] + h;
            let up = self.eval(x, &p);
            p[k] = params[k] - h;
            let down = self.eval(x, &p);
            p[k] = params[k];
            *slot = (up - down) / (2.0 * h);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative cost decrease below which iteration stops.
    pub tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmFit {
    pub params: Vec<f64>,
    /// One-sigma parameter uncertainties from the residual-scaled covariance.
    pub stderr: Vec<f64>,
    pub residual_rms: f64,
    pub iterations: usize,
}

/// Levenberg-Marquardt minimization of the sum of squared residuals.
pub fn levenberg_marquardt<M: Model>(
    model: &M,
    x: &[f64],
    y: &[f64],
    initial: &[f64],
    opts: &LmOptions,
) -> Result<LmFit> {
    let n = x.len();
    let p = initial.len();
    if n != y.len() || n < p {
        return Err(Error::InvalidConfig("fit: not enough data points".into()));
    }
    let cost = |params: &[f64]| -> f64 {
        x.iter()
            .zip(y)
            .map(|(&xi, &yi)| {
                let r = yi - model.eval(xi, params);
                r * r
            })
            .sum()
    };

    let mut params = initial.to_vec();
    let mut current = cost(&params);
    if !current.is_finite() {
        return Err(Error::FitDiverged("non-finite initial cost".into()));
    }
    let mut lambda = 1e-3;
    let mut grad = vec![0.0; p];
    let mut iterations = 0;

    let normal_equations = |params: &[f64], grad: &mut [f64]| {
        let mut jtj = vec![vec![0.0; p]; p];
        let mut jtr = vec![0.0; p];
        for (&xi, &yi) in x.iter().zip(y) {
            model.gradient(xi, params, grad);
            let r = yi - model.eval(xi, params);
            for a in 0..p {
                jtr[a] += grad[a] * r;
                for b in a..p {
                    jtj[a][b] += grad[a] * grad[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }
        (jtj, jtr)
    };

    while iterations < opts.max_iterations {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&params, &mut grad);
        let mut improved = false;
        for _ in 0..30 {
            let mut damped = jtj.clone();
            for (k, row) in damped.iter_mut().enumerate() {
                row[k] += lambda * jtj[k][k].max(1e-300);
            }
            let step = match linalg::solve(&damped, &jtr) {
                Ok(s) => s,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = params.iter().zip(&step).map(|(a, b)| a + b).collect();
            let c = cost(&trial);
            if c.is_finite() && c <= current {
                let decrease = current - c;
                params = trial;
                let old = current;
                current = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if decrease <= opts.tolerance * old.max(1e-300) {
                    return finish(model, x, params, current, iterations, &mut grad);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step at any damping: at a minimum to working precision
            return finish(model, x, params, current, iterations, &mut grad);
        }
    }
    finish(model, x, params, current, iterations, &mut grad)
}

fn finish<M: Model>(
    model: &M,
    x: &[f64],
    params: Vec<f64>,
    cost: f64,
    iterations: usize,
    grad: &mut [f64],
) -> Result<LmFit> {
    let p = params.len();
    let n = x.len();
    let mut jtj = vec![vec![0.0; p]; p];
    for &xi in x {
        model.gradient(xi, &params, grad);
        for a in 0..p {
            for b in 0..p {
                jtj[a][b] += grad[a] * grad[b];
            }
        }
    }
    let dof = (n as f64 - p as f64).max(1.0);
    let s2 = cost / dof;
    let stderr = match linalg::invert(&jtj) {
        Ok(cov) => (0..p).map(|k| (cov[k][k] * s2).max(0.0).sqrt()).collect(),
        Err(_) => vec![f64::NAN; p],
    };
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitDiverged("non-finite parameters".into()));
    }
    Ok(LmFit {
        params,
        stderr,
        residual_rms: (cost / n as f64).sqrt(),
        iterations,
    })
}
