//! Limited-memory BFGS with a strong-Wolfe line search.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsOptions {
    pub memory: usize,
    /// Stop once the Euclidean gradient norm falls to this value.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Stop when a step lowers the objective by less than this fraction.
    pub rel_decrease_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-6,
            max_iter: 1000,
            rel_decrease_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Point {
    a: f64,
    f: f64,
    d: f64,
}

/// Minimises `f`, which returns the objective and writes the gradient.
/// Returns `None` only if the objective is non-finite at the start.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Option<LbfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() {
        return None;
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::with_capacity(opts.memory);
    let mut y_hist: Vec<Vec<f64>> = Vec::with_capacity(opts.memory);
    let mut rho: Vec<f64> = Vec::with_capacity(opts.memory);
    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha_buf = vec![0.0; opts.memory];
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let gn = norm(&g);
        if gn <= opts.grad_tol {
            return Some(LbfgsResult {
                x,
                f: fx,
                grad_norm: gn,
                iterations,
                converged: true,
            });
        }

        // Two-loop recursion.
        dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
        let m = s_hist.len();
        for i in (0..m).rev() {
            let a = rho[i] * dot(&s_hist[i], &dir);
            alpha_buf[i] = a;
            dir.iter_mut().zip(&y_hist[i]).for_each(|(d, y)| *d -= a * y);
        }
        if m > 0 {
            let gamma = dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for i in 0..m {
            let b = rho[i] * dot(&y_hist[i], &dir);
            let a = alpha_buf[i];
            dir.iter_mut().zip(&s_hist[i]).for_each(|(d, s)| *d += (a - b) * s);
        }
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = -gn * gn;
        }
        let a0 = if m == 0 { (1.0 / gn).min(1.0) } else { 1.0 };

        let mut eval = |a: f64, xn: &mut [f64], gn_: &mut [f64]| -> Point {
            for i in 0..n {
                xn[i] = x[i] + a * dir[i];
            }
            let fv = f(xn, gn_);
            Point { a, f: fv, d: dot(gn_, &dir) }
        };
        let found = line_search(&mut eval, fx, slope, a0, &mut x_new, &mut g_new);
        let Some(p) = found else {
            break;
        };
        iterations += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        let decrease = fx - p.f;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = p.f;
        if sy > 1e-10 * dot(&yv, &yv).max(f64::MIN_POSITIVE) {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            s_hist.push(s);
            y_hist.push(yv);
            rho.push(1.0 / sy);
        }
        if decrease <= opts.rel_decrease_tol * fx.abs().max(1.0) {
            break;
        }
    }
    let gn = norm(&g);
    Some(LbfgsResult {
        x,
        f: fx,
        grad_norm: gn,
        iterations,
        converged: gn <= opts.grad_tol,
    })
}

/// Strong-Wolfe search (bracketing then zoom). On success `xn`/`gn` hold the
/// accepted point.
fn line_search<E>(eval: &mut E, f0: f64, d0: f64, a0: f64, xn: &mut [f64], gn: &mut [f64]) -> Option<Point>
where
    E: FnMut(f64, &mut [f64], &mut [f64]) -> Point,
{
    let mut prev = Point { a: 0.0, f: f0, d: d0 };
    let mut a = a0;
    for i in 0..40 {
        let cur = eval(a, xn, gn);
        if !cur.f.is_finite() {
            a = 0.5 * (prev.a + a);
            continue;
        }
        if cur.f > f0 + C1 * a * d0 || (i > 0 && cur.f >= prev.f) {
            return zoom(eval, f0, d0, prev, cur, xn, gn);
        }
        if cur.d.abs() <= -C2 * d0 {
            return Some(cur);
        }
        if cur.d >= 0.0 {
            return zoom(eval, f0, d0, cur, prev, xn, gn);
        }
        prev = cur;
        a *= 2.0;
    }
    None
}

fn zoom<E>(eval: &mut E, f0: f64, d0: f64, mut lo: Point, mut hi: Point, xn: &mut [f64], gn: &mut [f64]) -> Option<Point>
where
    E: FnMut(f64, &mut [f64], &mut [f64]) -> Point,
{
    let mut best: Option<Point> = None;
    for _ in 0..50 {
        let width = hi.a - lo.a;
        if width.abs() < 1e-16 * lo.a.abs().max(1e-16) {
            break;
        }
        // Quadratic interpolation from (lo.f, lo.d, hi.f), safeguarded.
        let denom = 2.0 * (hi.f - lo.f - lo.d * width);
        let mut a = if denom.abs() > 0.0 { lo.a - lo.d * width * width / denom } else { f64::NAN };
        let (l, h) = (lo.a.min(hi.a), lo.a.max(hi.a));
        if !(a.is_finite() && a > l + 0.1 * (h - l) && a < h - 0.1 * (h - l)) {
            a = 0.5 * (lo.a + hi.a);
        }
        let cur = eval(a, xn, gn);
        if !cur.f.is_finite() || cur.f > f0 + C1 * a * d0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.d.abs() <= -C2 * d0 {
                return Some(cur);
            }
            if cur.d * (hi.a - lo.a) >= 0.0 {
                hi = Point { a: lo.a, f: lo.f, d: lo.d };
            }
            lo = cur;
            best = Some(Point { a: lo.a, f: lo.f, d: lo.d });
        }
    }
    // Accept the best sufficient-decrease point found, if any.
    let b = best.or(if lo.a > 0.0 { Some(lo) } else { None })?;
    let p = eval(b.a, xn, gn);
    (p.f < f0).then_some(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let c = [1.0, -2.0, 3.0];
        let scale = [1.0, 10.0, 100.0];
        let r = minimize(
            |x, g| {
                let mut f = 0.0;
                for i in 0..3 {
                    let d = x[i] - c[i];
                    f += 0.5 * scale[i] * d * d;
                    g[i] = scale[i] * d;
                }
                f
            },
            vec![0.0; 3],
            &LbfgsOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        for i in 0..3 {
            assert!((r.x[i] - c[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn rosenbrock() {
        let r = minimize(
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            vec![-1.2, 1.0],
            &LbfgsOptions::default(),
        )
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{r:?}");
    }
}
