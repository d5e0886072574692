//! L1/L2-regularized logistic regression (sigmoid for two classes, softmax
//! otherwise) fitted by accelerated proximal gradient with backtracking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{check_fit_input, sigmoid, softmax, Classifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticParams {
    pub penalty: Penalty,
    /// Inverse regularization strength.
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            penalty: Penalty::L2,
            c: 1.0,
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub n_features: usize,
    pub n_classes: usize,
    /// One row per logit: a single row for two classes (the class-1 logit),
    /// otherwise one row per class.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub penalty: Penalty,
    pub c: f64,
    pub n_iter: usize,
    pub converged: bool,
}

impl LogisticModel {
    /// Raw logits for one row.
    pub fn decision(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.intercepts)
            .map(|(w, b)| b + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Weights and intercept of the logit that raises class `k`; for the
    /// two-class model class 0 gets the negated class-1 logit.
    pub fn class_logit(&self, k: usize) -> (Vec<f64>, f64) {
        if self.n_classes == 2 {
            let sign = if k == 1 { 1.0 } else { -1.0 };
            (self.weights[0].iter().map(|w| sign * w).collect(), sign * self.intercepts[0])
        } else {
            (self.weights[k].clone(), self.intercepts[k])
        }
    }
}

impl Classifier for LogisticModel {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        let z = self.decision(x);
        if self.n_classes == 2 {
            let p = sigmoid(z[0]);
            out[0] = 1.0 - p;
            out[1] = p;
        } else {
            out.copy_from_slice(&z);
            softmax(out);
        }
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Smooth part of the objective: mean cross-entropy plus the optional
/// ridge term. Parameters are laid out as `[W (m×d) row-major, b (m)]`.
struct Objective<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    m: usize,
    l2: f64,
}

impl Objective<'_> {
    fn d(&self) -> usize {
        self.x.n_cols()
    }

    fn value_grad(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let (n, d, m) = (self.x.n_rows(), self.d(), self.m);
        let (w, b) = theta.split_at(m * d);
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut z = vec![0.0; m];
        let mut loss = 0.0;
        for r in 0..n {
            let xr = self.x.row(r);
            for k in 0..m {
                z[k] = b[k] + w[k * d..(k + 1) * d].iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
            }
            let yr = self.y[r];
            if m == 1 {
                let t = (yr == 1) as u8 as f64;
                loss += softplus(z[0]) - t * z[0];
                if let Some(g) = grad.as_deref_mut() {
                    let e = sigmoid(z[0]) - t;
                    for j in 0..d {
                        g[j] += e * xr[j];
                    }
                    g[d] += e;
                }
            } else {
                let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                loss += lse - z[yr];
                if let Some(g) = grad.as_deref_mut() {
                    for k in 0..m {
                        let e = (z[k] - lse).exp() - (k == yr) as u8 as f64;
                        for j in 0..d {
                            g[k * d + j] += e * xr[j];
                        }
                        g[m * d + k] += e;
                    }
                }
            }
        }
        let inv = 1.0 / n as f64;
        let ridge: f64 = w.iter().map(|v| v * v).sum::<f64>() * 0.5 * self.l2;
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v *= inv);
            for (gi, wi) in g[..m * d].iter_mut().zip(w) {
                *gi += self.l2 * wi;
            }
        }
        loss * inv + ridge
    }
}

fn l1_norm(theta: &[f64], nw: usize) -> f64 {
    theta[..nw].iter().map(|v| v.abs()).sum()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Minimizes mean cross-entropy + penalty/(C·n). Stops when the norm of the
/// proximal gradient mapping falls below `tol` or after `max_iter` steps.
pub fn fit_logistic(x: &Matrix, y: &[usize], n_classes: usize, params: &LogisticParams) -> Result<LogisticModel> {
    check_fit_input(x, y, n_classes)?;
    if !(params.c > 0.0) || !params.c.is_finite() {
        return Err(Error::Parameter(format!("C must be positive, got {}", params.c)));
    }
    if !(params.tol > 0.0) {
        return Err(Error::Parameter("tol must be positive".into()));
    }
    let (n, d) = (x.n_rows(), x.n_cols());
    let m = if n_classes == 2 { 1 } else { n_classes };
    let reg = 1.0 / (params.c * n as f64);
    let (l1, l2) = match params.penalty {
        Penalty::L1 => (reg, 0.0),
        Penalty::L2 => (0.0, reg),
    };
    let obj = Objective { x, y, m, l2 };
    let nw = m * d;
    let p = nw + m;

    let prox = |v: &[f64], step: f64, out: &mut [f64]| {
        for i in 0..p {
            out[i] = if i < nw { soft_threshold(v[i], step * l1) } else { v[i] };
        }
    };

    let mut xk = vec![0.0; p];
    let mut yk = xk.clone();
    let mut fx = obj.value_grad(&xk, None) + l1 * l1_norm(&xk, nw);
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    let mut grad = vec![0.0; p];
    let mut trial = vec![0.0; p];
    let mut z = vec![0.0; p];
    let mut converged = false;
    let mut iters = 0;
    for it in 0..params.max_iter {
        iters = it + 1;
        let fy = obj.value_grad(&yk, Some(&mut grad));
        lip = (lip * 0.5).max(1e-12);
        let fz = loop {
            for i in 0..p {
                trial[i] = yk[i] - grad[i] / lip;
            }
            prox(&trial, 1.0 / lip, &mut z);
            let fz = obj.value_grad(&z, None);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for i in 0..p {
                let dlt = z[i] - yk[i];
                lin += grad[i] * dlt;
                sq += dlt * dlt;
            }
            if fz <= fy + lin + 0.5 * lip * sq + 1e-15 * fy.abs() || lip > 1e15 {
                break fz;
            }
            lip *= 2.0;
        };
        let mapping = lip * z.iter().zip(&yk).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let fz_total = fz + l1 * l1_norm(&z, nw);
        if mapping < params.tol {
            xk.copy_from_slice(&z);
            converged = true;
            break;
        }
        if fz_total > fx {
            // momentum overshoot: restart from the last accepted point
            t = 1.0;
            yk.copy_from_slice(&xk);
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        for i in 0..p {
            yk[i] = z[i] + beta * (z[i] - xk[i]);
        }
        xk.copy_from_slice(&z);
        fx = fz_total;
        t = t_next;
    }
    if xk.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("logistic regression diverged".into()));
    }
    let weights = (0..m).map(|k| xk[k * d..(k + 1) * d].to_vec()).collect();
    Ok(LogisticModel {
        n_features: d,
        n_classes,
        weights,
        intercepts: xk[nw..].to_vec(),
        penalty: params.penalty,
        c: params.c,
        n_iter: iters,
        converged,
    })
}
