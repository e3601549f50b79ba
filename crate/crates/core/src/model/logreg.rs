//! L2-regularised logistic regression:
//!
//! ```text
//! f(w, b) = ½‖w‖² + C Σ_i ln(1 + exp(-y_i (w·x_i + b))),   y_i ∈ {-1, +1}
//! ```
//!
//! The bias is not regularised. Parameters are packed as `[w.., b]`.

use super::lbfgs::{minimize, LbfgsOptions};
use super::tfidf::CsrMatrix;
use crate::{Error, Result};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub fn signed(labels: &[bool]) -> Vec<f64> {
    labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect()
}

/// Objective value; the gradient with respect to `theta` is written to `grad`.
pub fn objective(x: &CsrMatrix, y: &[f64], c: f64, theta: &[f64], grad: &mut [f64]) -> f64 {
    let d = x.n_cols;
    let (w, b) = (&theta[..d], theta[d]);
    let mut f = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    grad[..d].copy_from_slice(w);
    grad[d] = 0.0;
    let mut loss = 0.0;
    for i in 0..x.n_rows() {
        let z = x.dot_row(i, w) + b;
        let m = y[i] * z;
        loss += softplus(-m);
        // d/dz softplus(-y z) = -y σ(-y z)
        let gz = -y[i] * sigmoid(-m) * c;
        let (idx, val) = x.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            grad[j as usize] += gz * v;
        }
        grad[d] += gz;
    }
    f += c * loss;
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogRegFit {
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.weights.clone();
        t.push(self.bias);
        t
    }
}

pub fn train_logreg(x: &CsrMatrix, labels: &[bool], c: f64, opts: &LbfgsOptions, start: Option<&[f64]>) -> Result<LogRegFit> {
    if labels.len() != x.n_rows() {
        return Err(Error::invalid("training data", "labels do not align with rows"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("C", format!("{c} is not a positive finite value")));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SingleClass);
    }
    if x.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix"));
    }
    let y = signed(labels);
    let d = x.n_cols;
    let theta0 = match start {
        Some(s) if s.len() == d + 1 => s.to_vec(),
        _ => vec![0.0; d + 1],
    };
    let r = minimize(|t, g| objective(x, &y, c, t, g), theta0, opts).ok_or(Error::NonFinite("logistic loss"))?;
    if !r.f.is_finite() {
        return Err(Error::NonFinite("logistic loss"));
    }
    if !r.converged {
        log::debug!("L-BFGS stopped after {} iterations with |g| = {:.3e}", r.iterations, r.grad_norm);
    }
    let mut weights = r.x;
    let bias = weights.pop().expect("bias slot");
    Ok(LogRegFit {
        weights,
        bias,
        objective: r.f,
        grad_norm: r.grad_norm,
        iterations: r.iterations,
        converged: r.converged,
    })
}

pub fn predict_proba(x: &CsrMatrix, weights: &[f64], bias: f64) -> Vec<f64> {
    (0..x.n_rows()).map(|i| sigmoid(x.dot_row(i, weights) + bias)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy() -> (CsrMatrix, Vec<bool>) {
        let x = CsrMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 3.0], vec![-1.0, -1.5], vec![-2.0, -1.0]]);
        (x, vec![true, true, false, false])
    }

    #[test]
    fn zero_start_gives_half() {
        let (x, _) = toy();
        assert!(predict_proba(&x, &[0.0, 0.0], 0.0).iter().all(|&p| p == 0.5));
    }

    #[test]
    fn separable_four_points() {
        let (x, y) = toy();
        let fit = train_logreg(&x, &y, 1.0, &LbfgsOptions::default(), None).unwrap();
        let p = predict_proba(&x, &fit.weights, fit.bias);
        assert!(p.iter().zip(&y).all(|(&p, &l)| (p > 0.5) == l));
        let mut g = vec![0.0; 3];
        objective(&x, &signed(&y), 1.0, &fit.theta(), &mut g);
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-5);
        // finite-difference check at the optimum
        let h = 1e-5;
        for k in 0..3 {
            let mut tp = fit.theta();
            let mut tm = fit.theta();
            tp[k] += h;
            tm[k] -= h;
            let mut s = vec![0.0; 3];
            let fd = (objective(&x, &signed(&y), 1.0, &tp, &mut s) - objective(&x, &signed(&y), 1.0, &tm, &mut s)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn tiny_c_shrinks_to_half() {
        let (x, y) = toy();
        let fit = train_logreg(&x, &y, 1e-10, &LbfgsOptions::default(), None).unwrap();
        assert!(fit.weights.iter().all(|w| w.abs() < 1e-6));
        assert!(fit.bias.abs() < 1e-3);
        assert!(predict_proba(&x, &fit.weights, fit.bias).iter().all(|p| (p - 0.5).abs() < 1e-3));
    }

    #[test]
    fn single_class_rejected() {
        let (x, _) = toy();
        assert!(matches!(
            train_logreg(&x, &[true; 4], 1.0, &LbfgsOptions::default(), None),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = crate::seed::rng(3);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..6).map(|_| if rng.random_bool(0.5) { rng.random_range(-1.0..1.0) } else { 0.0 }).collect())
            .collect();
        let x = CsrMatrix::from_dense(&rows);
        let y: Vec<f64> = (0..30).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        for _ in 0..20 {
            let theta: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut g = vec![0.0; 7];
            objective(&x, &y, 3.0, &theta, &mut g);
            for k in 0..7 {
                let (mut tp, mut tm) = (theta.clone(), theta.clone());
                tp[k] += 1e-5;
                tm[k] -= 1e-5;
                let mut s = vec![0.0; 7];
                let fd = (objective(&x, &y, 3.0, &tp, &mut s) - objective(&x, &y, 3.0, &tm, &mut s)) / 2e-5;
                let rel = (fd - g[k]).abs() / g[k].abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-5, "component {k}: {fd} vs {}", g[k]);
            }
        }
    }
}
