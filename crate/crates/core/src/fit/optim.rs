//! Box-constrained quasi-Newton minimization.
//!
//! Projected BFGS: the search direction comes from an inverse-Hessian
//! approximation restricted to the variables not held at a bound, steps are
//! projected back into the box and accepted by Armijo backtracking.

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    /// Infinity norm of the projected gradient at `x`.
    pub pg_norm: f64,
    pub evals: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const WOLFE_CURVATURE: f64 = 0.9;
const APPROX_WOLFE_DELTA: f64 = 0.1;
const APPROX_WOLFE_EPS: f64 = 1e-12;
const MAX_BACKTRACK: usize = 60;

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

fn is_active(x: f64, g: f64, lo: f64, hi: f64) -> bool {
    (x <= lo && g > 0.0) || (x >= hi && g < 0.0) || lo == hi
}

pub fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    (0..x.len())
        .filter(|&i| !is_active(x[i], g[i], lower[i], upper[i]))
        .map(|i| g[i].abs())
        .fold(0.0, f64::max)
}

/// Minimizes `f` over `lower <= x <= upper`. `f` returns the value and the
/// gradient; non-finite values are treated as infeasible.
pub fn minimize_box<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], tol: f64, max_evals: usize) -> OptimResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut fx, mut g) = f(&x);
    let mut evals = 1;
    let identity = |n: usize| {
        let mut h = vec![vec![0.0; n]; n];
        for (i, row) in h.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        h
    };
    let mut h = identity(n);
    let mut fresh = true;
    let mut stalls = 0;

    let finish = |x: Vec<f64>, fx: f64, g: Vec<f64>, evals: usize| {
        let pg = projected_gradient_norm(&x, &g, lower, upper);
        OptimResult { converged: fx.is_finite() && pg < tol, x, f: fx, grad: g, pg_norm: pg, evals }
    };

    if !fx.is_finite() {
        return finish(x, fx, g, evals);
    }

    while evals < max_evals {
        if projected_gradient_norm(&x, &g, lower, upper) < tol {
            break;
        }
        let free: Vec<bool> = (0..n).map(|i| !is_active(x[i], g[i], lower[i], upper[i])).collect();
        let mut d = vec![0.0; n];
        for i in (0..n).filter(|&i| free[i]) {
            d[i] = -(0..n).filter(|&j| free[j]).map(|j| h[i][j] * g[j]).sum::<f64>();
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = identity(n);
            fresh = true;
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                break;
            }
        }
        let mut t = 1.0;
        if fresh {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if dmax > 1.0 {
                t = 1.0 / dmax;
            }
        }
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            if evals >= max_evals {
                break;
            }
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            project(&mut xn, lower, upper);
            let decrease: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            let (fnew, gnew) = f(&xn);
            evals += 1;
            if fnew.is_finite() && fnew <= fx + ARMIJO * decrease.min(0.0) {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            // near the optimum decreases vanish below rounding; fall back to
            // the approximate Wolfe test on the directional derivative
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let d0: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
            let d1: f64 = gnew.iter().zip(&step).map(|(a, b)| a * b).sum();
            if fnew.is_finite()
                && d0 < 0.0
                && fnew <= fx + APPROX_WOLFE_EPS * fx.abs().max(1.0)
                && d1 >= WOLFE_CURVATURE * d0
                && d1 <= (2.0 * APPROX_WOLFE_DELTA - 1.0) * d0
            {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if fresh {
                break;
            }
            h = identity(n);
            fresh = true;
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = (0..n).map(|i| if s[i] == 0.0 && !free[i] { 0.0 } else { gnew[i] - g[i] }).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * s.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt() {
            if fresh {
                // Shanno-Phua scaling of the first approximation
                let yy: f64 = y.iter().map(|v| v * v).sum();
                let scale = sy / yy;
                for (i, row) in h.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = if i == j { scale } else { 0.0 };
                    }
                }
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        let progress = fx - fnew;
        x = xn;
        fx = fnew;
        g = gnew;
        if progress <= 4.0 * f64::EPSILON * fx.abs().max(1.0) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    finish(x, fx, g, evals)
}

/// `H <- (I - rho s y') H (I - rho y s') + rho s s'`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
