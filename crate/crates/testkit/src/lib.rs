//! Reference computations for tests: explicit dense linear algebra, bordered
//! kriging systems, contrast likelihoods and brute-force quadrature. Nothing
//! here shares code with the library under test.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Squared-exponential correlation `exp(-sum_k ((a_k - b_k) / e^theta_k)^2)`.
pub fn se_kernel(a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = (a[k] - b[k]) / theta[k].exp();
        s += d * d;
    }
    (-s).exp()
}

pub fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().cloned().collect()
}

/// Correlation matrix of the rows of `inputs` plus `nugget` on the diagonal.
pub fn covariance(inputs: &DMatrix<f64>, theta: &[f64], nugget: f64) -> DMatrix<f64> {
    let n = inputs.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        se_kernel(&row(inputs, i), &row(inputs, j), theta) + if i == j { nugget } else { 0.0 }
    })
}

pub fn correlations(inputs: &DMatrix<f64>, s0: &[f64], theta: &[f64]) -> DVector<f64> {
    DVector::from_fn(inputs.nrows(), |i, _| se_kernel(&row(inputs, i), s0, theta))
}

fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().try_inverse().expect("reference matrix is invertible")
}

fn log_det(m: &DMatrix<f64>) -> f64 {
    let d = m.clone().lu().determinant();
    assert!(d > 0.0, "reference determinant {d} is not positive");
    d.ln()
}

/// Random test instance: inputs uniform on `[0, width]^k`, a mean design
/// whose first column is ones and remaining `q - 1` columns are uniform on
/// `[-1, 1]`, standard-Normal outputs.
pub struct Instance {
    pub inputs: DMatrix<f64>,
    pub mean_design: DMatrix<f64>,
    pub outputs: DVector<f64>,
}

pub fn random_instance<R: Rng>(rng: &mut R, n: usize, k: usize, q: usize, width: f64) -> Instance {
    let inputs = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() * width);
    let mean_design = DMatrix::from_fn(n, q, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
    let outputs = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    Instance { inputs, mean_design, outputs }
}

/// Smallest pairwise distance between rows.
pub fn min_separation(inputs: &DMatrix<f64>) -> f64 {
    let n = inputs.nrows();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in 0..i {
            best = best.min((inputs.row(i) - inputs.row(j)).norm());
        }
    }
    best
}

/// Generalized least squares with explicit inverses.
pub struct Gls {
    pub beta: DVector<f64>,
    /// `Z^T H Z` with `H = V^-1 - V^-1 X (X^T V^-1 X)^-1 X^T V^-1`.
    pub g_sq: f64,
    pub log_det_v: f64,
    pub log_det_xtvx: f64,
}

pub fn gls(v: &DMatrix<f64>, x: &DMatrix<f64>, z: &DVector<f64>) -> Gls {
    let vi = inverse(v);
    let xtvx = x.transpose() * &vi * x;
    let xtvx_inv = inverse(&xtvx);
    let beta = &xtvx_inv * x.transpose() * &vi * z;
    let h = &vi - &vi * x * &xtvx_inv * x.transpose() * &vi;
    let g_sq = (z.transpose() * h * z)[(0, 0)];
    Gls { beta, g_sq, log_det_v: log_det(v), log_det_xtvx: log_det(&xtvx) }
}

/// Full Gaussian negative log-likelihood at `(beta, alpha)`.
pub fn full_nll(v: &DMatrix<f64>, x: &DMatrix<f64>, z: &DVector<f64>, beta: &DVector<f64>, alpha: f64) -> f64 {
    let n = z.len() as f64;
    let r = z - x * beta;
    let quad = (r.transpose() * inverse(v) * &r)[(0, 0)];
    0.5 * n * (LN_2PI + alpha.ln()) + 0.5 * log_det(v) + quad / (2.0 * alpha)
}

/// Predictor and mean squared prediction error from the bordered system
/// `[V X; X^T 0] [w; mu] = [phi; x0]`, with `Var Z(s0) = alpha (1 + nugget)`.
pub fn lagrange_predict(
    v: &DMatrix<f64>,
    x: &DMatrix<f64>,
    z: &DVector<f64>,
    phi: &DVector<f64>,
    x0: &[f64],
    nugget: f64,
    alpha: f64,
) -> (f64, f64) {
    let n = v.nrows();
    let q = x.ncols();
    let mut a = DMatrix::zeros(n + q, n + q);
    a.view_mut((0, 0), (n, n)).copy_from(v);
    a.view_mut((0, n), (n, q)).copy_from(x);
    a.view_mut((n, 0), (q, n)).copy_from(&x.transpose());
    let mut b = DVector::zeros(n + q);
    b.rows_mut(0, n).copy_from(phi);
    for j in 0..q {
        b[n + j] = x0[j];
    }
    let sol = a.lu().solve(&b).expect("bordered system is nonsingular");
    let w = sol.rows(0, n).into_owned();
    let z_hat = w.dot(z);
    let mspe = alpha * ((1.0 + nugget) - 2.0 * w.dot(phi) + (w.transpose() * v * &w)[(0, 0)]);
    (z_hat, mspe)
}

/// Orthonormal basis of the orthogonal complement of the column space of `x`,
/// from the eigenvectors of `I - X (X^T X)^-1 X^T` with eigenvalue one.
pub fn complement_basis(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let p = DMatrix::identity(n, n) - x * inverse(&(x.transpose() * x)) * x.transpose();
    let eig = p.symmetric_eigen();
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

/// Negative log-likelihood of the error contrasts `W^T Z`, profiled over the
/// scale.
pub fn contrast_nll(v: &DMatrix<f64>, w: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    let m = w.ncols() as f64;
    let y = w.transpose() * z;
    let c = w.transpose() * v * w;
    let g_sq = (y.transpose() * inverse(&c) * &y)[(0, 0)];
    0.5 * m * LN_2PI + 0.5 * m * (g_sq / m).ln() + 0.5 * log_det(&c) + 0.5 * m
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln ∫∫ L(beta, alpha) / alpha dbeta dalpha` for a single-column mean
/// design, by the trapezoidal rule on `beta = c + s sinh(t)` and
/// `u = ln alpha`.
pub fn log_marginal_quadrature(v: &DMatrix<f64>, x: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    assert_eq!(x.ncols(), 1);
    let n = z.len() as f64;
    let vi = inverse(v);
    let xc = x.column(0).into_owned();
    let a = (z.transpose() * &vi * z)[(0, 0)];
    let b = (xc.transpose() * &vi * z)[(0, 0)];
    let c = (xc.transpose() * &vi * &xc)[(0, 0)];
    let half_log_det = 0.5 * log_det(v);
    let centre = b / c;
    let q_min = a - b * b / c;
    let spread = (q_min / ((n - 1.0) * c)).sqrt();

    let ht: f64 = 0.01;
    let hu: f64 = 0.01;
    let mut outer = Vec::with_capacity(2401);
    for i in -1200..=1200 {
        let t = i as f64 * ht;
        let beta = centre + spread * t.sinh();
        let jac = spread * t.cosh();
        let q = a - 2.0 * b * beta + c * beta * beta;
        let u_peak = (q / n).ln();
        let inner: Vec<f64> = (-800..=8000)
            .map(|j| {
                let u = u_peak + j as f64 * hu;
                -0.5 * n * (LN_2PI + u) - half_log_det - q * (-u).exp() / 2.0
            })
            .collect();
        outer.push(log_sum_exp(&inner) + hu.ln() + jac.ln());
    }
    log_sum_exp(&outer) + ht.ln()
}

/// Draw from `N(mean, alpha V)` using an explicit Cholesky factor.
pub fn gp_draw<R: Rng>(v: &DMatrix<f64>, mean: f64, alpha: f64, rng: &mut R) -> DVector<f64> {
    let l = v.clone().cholesky().expect("covariance is positive definite").l();
    let e = DVector::from_fn(v.nrows(), |_, _| StandardNormal.sample(rng));
    (l * e) * alpha.sqrt() + DVector::from_element(v.nrows(), mean)
}

/// Exact central `level` acceptance region `[lo, hi]` of Binomial(n, p):
/// the `(1 - level) / 2` and `(1 + level) / 2` quantiles.
pub fn binomial_band(n: u64, p: f64, level: f64) -> (u64, u64) {
    let mut pmf = Vec::with_capacity(n as usize + 1);
    let mut log_c = 0.0;
    for k in 0..=n {
        if k > 0 {
            log_c += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        pmf.push((log_c + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp());
    }
    let tail = (1.0 - level) / 2.0;
    let mut cdf = 0.0;
    let mut lo = None;
    let mut hi = n;
    for (k, m) in pmf.iter().enumerate() {
        cdf += m;
        if lo.is_none() && cdf >= tail {
            lo = Some(k as u64);
        }
        if cdf >= 1.0 - tail {
            hi = k as u64;
            break;
        }
    }
    (lo.unwrap_or(0), hi)
}
