//! Linear SVM with squared hinge loss, trained in the primal by Newton-CG
//! with a backtracking line search. Multiclass uses one-vs-rest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{check_fit_input, sigmoid, softmax, Classifier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmParams {
    pub c: f64,
    /// Relative gradient-norm tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 10.0,
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub n_features: usize,
    pub n_classes: usize,
    /// One hyperplane for two classes (positive side = class 1), otherwise
    /// one per class.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub c: f64,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.intercepts)
            .map(|(w, b)| b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }
}

impl Classifier for SvmModel {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    /// Sigmoid of the decision value for two classes, softmax of the
    /// one-vs-rest decision values otherwise.
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

struct Primal<'a> {
    x: &'a Matrix,
    /// ±1 targets.
    t: Vec<f64>,
    c: f64,
}

impl Primal<'_> {
    /// Objective, gradient and the active set (rows with positive slack).
    fn eval(&self, theta: &[f64], grad: &mut [f64], active: &mut Vec<usize>) -> f64 {
        let d = self.x.n_cols();
        let (w, b) = (&theta[..d], theta[d]);
        grad[..d].copy_from_slice(w);
        grad[d] = 0.0;
        active.clear();
        let mut loss = 0.0;
        for r in 0..self.x.n_rows() {
            let xr = self.x.row(r);
            let m = self.t[r] * (b + w.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>());
            let slack = 1.0 - m;
            if slack > 0.0 {
                loss += slack * slack;
                active.push(r);
                let coef = -2.0 * self.c * self.t[r] * slack;
                for j in 0..d {
                    grad[j] += coef * xr[j];
                }
                grad[d] += coef;
            }
        }
        0.5 * w.iter().map(|v| v * v).sum::<f64>() + self.c * loss
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let d = self.x.n_cols();
        let (w, b) = (&theta[..d], theta[d]);
        let mut loss = 0.0;
        for r in 0..self.x.n_rows() {
            let m = self.t[r] * (b + w.iter().zip(self.x.row(r)).map(|(a, c)| a * c).sum::<f64>());
            let slack = 1.0 - m;
            if slack > 0.0 {
                loss += slack * slack;
            }
        }
        0.5 * w.iter().map(|v| v * v).sum::<f64>() + self.c * loss
    }

    /// Generalized Hessian-vector product over the active set.
    fn hess_vec(&self, active: &[usize], v: &[f64], out: &mut [f64]) {
        let d = self.x.n_cols();
        out[..d].copy_from_slice(&v[..d]);
        out[d] = 0.0;
        for &r in active {
            let xr = self.x.row(r);
            let dot = v[d] + xr.iter().zip(v).map(|(a, c)| a * c).sum::<f64>();
            let coef = 2.0 * self.c * dot;
            for j in 0..d {
                out[j] += coef * xr[j];
            }
            out[d] += coef;
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn solve_binary(x: &Matrix, positive: &[bool], params: &SvmParams) -> (Vec<f64>, f64) {
    let d = x.n_cols();
    let p = d + 1;
    let prob = Primal {
        x,
        t: positive.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect(),
        c: params.c,
    };
    let mut theta = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut active = Vec::new();
    let mut f = prob.eval(&theta, &mut grad, &mut active);
    let g0 = norm(&grad).max(1e-300);
    let (mut s, mut r, mut dir, mut hd, mut trial) = (vec![0.0; p], vec![0.0; p], vec![0.0; p], vec![0.0; p], vec![0.0; p]);
    for _ in 0..params.max_iter {
        let gn = norm(&grad);
        if gn <= params.tol * g0 || gn < 1e-14 {
            break;
        }
        // conjugate gradient on H s = -g
        s.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..p {
            r[i] = -grad[i];
        }
        dir.copy_from_slice(&r);
        let mut rr = dot(&r, &r);
        let cg_tol = (0.1f64).min(gn.sqrt()) * gn;
        for _ in 0..(2 * p).max(50) {
            if rr.sqrt() <= cg_tol {
                break;
            }
            prob.hess_vec(&active, &dir, &mut hd);
            let curv = dot(&dir, &hd);
            if curv <= 1e-300 {
                break;
            }
            let alpha = rr / curv;
            for i in 0..p {
                s[i] += alpha * dir[i];
                r[i] -= alpha * hd[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..p {
                dir[i] = r[i] + beta * dir[i];
            }
        }
        if dot(&s, &grad) >= 0.0 {
            // not a descent direction: fall back to steepest descent
            for i in 0..p {
                s[i] = -grad[i];
            }
        }
        let slope = dot(&s, &grad);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..p {
                trial[i] = theta[i] + step * s[i];
            }
            let ft = prob.value(&trial);
            if ft <= f + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        theta.copy_from_slice(&trial);
        f = prob.eval(&theta, &mut grad, &mut active);
    }
    let b = theta[d];
    theta.truncate(d);
    (theta, b)
}

pub fn fit_linear_svm(x: &Matrix, y: &[usize], n_classes: usize, params: &SvmParams) -> Result<SvmModel> {
    check_fit_input(x, y, n_classes)?;
    if !(params.c > 0.0) || !params.c.is_finite() {
        return Err(Error::Parameter(format!("C must be positive, got {}", params.c)));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in y {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Fit("linear SVM needs at least two classes in the training labels".into()));
    }
    if n_classes > 2 && counts.contains(&0) {
        return Err(Error::Fit("one-vs-rest needs every class present in training".into()));
    }
    let targets: Vec<usize> = if n_classes == 2 { vec![1] } else { (0..n_classes).collect() };
    let mut weights = Vec::new();
    let mut intercepts = Vec::new();
    for k in targets {
        let positive: Vec<bool> = y.iter().map(|&l| l == k).collect();
        let (w, b) = solve_binary(x, &positive, params);
        weights.push(w);
        intercepts.push(b);
    }
    Ok(SvmModel {
        n_features: x.n_cols(),
        n_classes,
        weights,
        intercepts,
        c: params.c,
    })
}
