//! Box-constrained local minimization: projected BFGS on finite-difference
//! gradients, with a clamped Nelder-Mead simplex as fallback.

use crate::numdiff;

#[derive(Clone, Debug)]
pub struct OptimOptions {
    pub max_iterations: usize,
    /// Stop when the projected gradient's max-norm falls below this.
    pub gradient_tol: f64,
    /// Relative function-change tolerance.
    pub f_tol: f64,
    /// Relative finite-difference step for gradients.
    pub fd_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { max_iterations: 500, gradient_tol: 1e-6, f_tol: 1e-12, fd_step: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
}

/// Minimizes `f` over the box `[lo, hi]` with projected BFGS. Non-finite
/// objective values are treated as `+inf`.
pub fn bfgs_box<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &OptimOptions) -> OptimResult {
    let d = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let obj = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut x = x0.to_vec();
    clamp_into(&mut x, lo, hi);
    let mut fx = obj(&x);
    if !fx.is_finite() {
        return OptimResult { x, f: fx, iterations: 0, evaluations: evals.get(), converged: false };
    }
    let mut g = numdiff::gradient(&obj, &x, opts.fd_step);
    let mut h = identity(d);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        let free: Vec<bool> = (0..d)
            .map(|k| !((x[k] <= lo[k] && g[k] > 0.0) || (x[k] >= hi[k] && g[k] < 0.0)))
            .collect();
        let pg: Vec<f64> = (0..d).map(|k| if free[k] { g[k] } else { 0.0 }).collect();
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.gradient_tol {
            converged = true;
            break;
        }
        let mut dir = mat_vec(&h, &pg);
        for k in 0..d {
            if free[k] {
                dir[k] = -dir[k];
            } else {
                dir[k] = 0.0;
            }
        }
        if dot(&dir, &pg) >= 0.0 {
            h = identity(d);
            dir = pg.iter().map(|v| -v).collect();
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            clamp_into(&mut xn, lo, hi);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if step.iter().all(|s| *s == 0.0) {
                break;
            }
            let fnew = obj(&xn);
            if fnew <= fx + 1e-4 * dot(&g, &step) {
                accepted = Some((xn, fnew, step));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew, s)) = accepted else {
            if is_identity(&h) {
                // No descent along the steepest direction at this resolution.
                converged = true;
                break;
            }
            h = identity(d);
            continue;
        };
        let gn = numdiff::gradient(&obj, &xn, opts.fd_step);
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            bfgs_update(&mut h, &s, &y, sy);
        }
        let small_change = (fx - fnew).abs() <= opts.f_tol * (1.0 + fx.abs());
        x = xn;
        fx = fnew;
        g = gn;
        if small_change {
            converged = true;
            break;
        }
    }
    OptimResult { x, f: fx, iterations, evaluations: evals.get(), converged }
}

fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn is_identity(h: &[Vec<f64>]) -> bool {
    h.iter().enumerate().all(|(i, r)| r.iter().enumerate().all(|(j, v)| *v == if i == j { 1.0 } else { 0.0 }))
}

fn mat_vec(h: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    h.iter().map(|r| dot(r, v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Inverse-Hessian BFGS update.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let d = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..d {
        for j in 0..d {
            h[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Nelder-Mead simplex with every vertex clamped into the box.
pub fn nelder_mead_box<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    initial_step: f64,
    max_iterations: usize,
    f_tol: f64,
) -> OptimResult {
    let d = x0.len();
    let mut evaluations = 0usize;
    let mut obj = |x: &mut Vec<f64>| {
        clamp_into(x, lo, hi);
        evaluations += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let mut start = x0.to_vec();
    let fs = obj(&mut start);
    simplex.push((start.clone(), fs));
    for k in 0..d {
        let mut v = start.clone();
        v[k] += if v[k] + initial_step <= hi[k] { initial_step } else { -initial_step };
        let fv = obj(&mut v);
        simplex.push((v, fv));
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iterations {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[d].1;
        if (worst - best).abs() <= f_tol * (1.0 + best.abs()) && worst.is_finite() {
            converged = true;
            break;
        }
        let centroid: Vec<f64> =
            (0..d).map(|k| simplex[..d].iter().map(|(v, _)| v[k]).sum::<f64>() / d as f64).collect();
        let along = |t: f64, from: &[f64]| -> Vec<f64> {
            centroid.iter().zip(from).map(|(c, w)| c + t * (w - c)).collect()
        };
        let worst_pt = simplex[d].0.clone();
        let mut xr = along(-1.0, &worst_pt);
        let fr = obj(&mut xr);
        if fr < simplex[0].1 {
            let mut xe = along(-2.0, &worst_pt);
            let fe = obj(&mut xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let mut xc = if fr < worst { along(-0.5, &worst_pt) } else { along(0.5, &worst_pt) };
            let fc = obj(&mut xc);
            if fc < worst.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best_pt = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let mut v: Vec<f64> = best_pt.iter().zip(&item.0).map(|(b, w)| b + 0.5 * (w - b)).collect();
                    let fv = obj(&mut v);
                    *item = (v, fv);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    OptimResult { x, f: fx, iterations, evaluations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn bfgs_finds_rosenbrock_minimum() {
        let r = bfgs_box(&rosenbrock, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &OptimOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn bfgs_respects_bounds() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2);
        let r = bfgs_box(&f, &[0.0, 0.0], &[-1.0, -0.5], &[1.0, 1.0], &OptimOptions::default());
        assert_eq!(r.x[0], 1.0);
        assert_eq!(r.x[1], -0.5);
        assert!(r.converged);
    }

    #[test]
    fn nelder_mead_quadratic() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.7).powi(2);
        let r = nelder_mead_box(&f, &[2.0, 2.0], &[-5.0, -5.0], &[5.0, 5.0], 0.5, 5000, 1e-14);
        assert!((r.x[0] - 0.3).abs() < 1e-5 && (r.x[1] + 0.7).abs() < 1e-5, "{r:?}");
    }
}
