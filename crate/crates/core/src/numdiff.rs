//! Central finite differences.

use nalgebra::{DMatrix, DVector};

/// Step used for coordinate `x`: `rel * max(1, |x|)`.
pub fn step(rel: f64, x: f64) -> f64 {
    rel * x.abs().max(1.0)
}

pub fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], rel: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = step(rel, x[k]);
            work[k] = x[k] + h;
            let fp = f(&work);
            work[k] = x[k] - h;
            let fm = f(&work);
            work[k] = x[k];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Symmetric central-difference Hessian; the step in coordinate `k` is
/// `rel * max(1, |x_k|)`.
pub fn hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], rel: f64) -> DMatrix<f64> {
    let d = x.len();
    let f0 = f(x);
    let h: Vec<f64> = x.iter().map(|&v| step(rel, v)).collect();
    let mut work = x.to_vec();
    let mut eval = |shifts: &[(usize, f64)]| {
        for &(k, s) in shifts {
            work[k] += s;
        }
        let v = f(&work);
        for &(k, s) in shifts {
            work[k] -= s;
        }
        // Undo accumulated rounding from the add/subtract pair.
        for &(k, _) in shifts {
            work[k] = x[k];
        }
        v
    };
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        let fp = eval(&[(i, h[i])]);
        let fm = eval(&[(i, -h[i])]);
        out[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let fpp = eval(&[(i, h[i]), (j, h[j])]);
            let fpm = eval(&[(i, h[i]), (j, -h[j])]);
            let fmp = eval(&[(i, -h[i]), (j, h[j])]);
            let fmm = eval(&[(i, -h[i]), (j, -h[j])]);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn to_dvector(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}
