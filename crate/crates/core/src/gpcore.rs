//! Gaussian-process model `Z ~ N(X beta, alpha V(theta))` with the
//! anisotropic squared-exponential correlation
//! `v_ij = exp(-sum_k (s_ik - s_jk)^2 / exp(theta_k)^2)`.
//!
//! Everything is computed from one Cholesky factor of `V(theta) + nugget I`
//! and a QR factorization of the whitened mean design; no explicit inverses.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numdiff;
use crate::optim::{self, OptimOptions};
use crate::seed;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-column affine standardization of the inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ColumnScaling {
    /// Zero mean, unit sample standard deviation per column. Constant columns
    /// keep scale 1.
    pub fn fit(inputs: &DMatrix<f64>) -> Self {
        let n = inputs.nrows() as f64;
        let (center, scale) = inputs
            .column_iter()
            .map(|c| {
                let m = c.iter().sum::<f64>() / n;
                let v = if n > 1.0 { c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
                (m, if v > 0.0 { v.sqrt() } else { 1.0 })
            })
            .unzip();
        Self { center, scale }
    }

    pub fn apply(&self, point: &[f64]) -> Vec<f64> {
        point.iter().zip(self.center.iter().zip(&self.scale)).map(|(x, (c, s))| (x - c) / s).collect()
    }
}

/// Training data of the surrogate.
#[derive(Clone, Debug, PartialEq)]
pub struct GpDesign {
    /// n x K input locations, already transformed by `scaling` when present.
    inputs: DMatrix<f64>,
    /// n x q mean-model design matrix.
    mean_design: DMatrix<f64>,
    outputs: DVector<f64>,
    scaling: Option<ColumnScaling>,
    log_det_xtx: f64,
}

impl GpDesign {
    pub fn new(inputs: DMatrix<f64>, mean_design: DMatrix<f64>, outputs: DVector<f64>) -> Result<Self> {
        let n = inputs.nrows();
        let q = mean_design.ncols();
        if mean_design.nrows() != n || outputs.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "inputs have {n} rows, mean design {} rows, outputs {} entries",
                mean_design.nrows(),
                outputs.len()
            )));
        }
        if q == 0 {
            return Err(Error::InvalidParameter("mean design needs at least one column".into()));
        }
        if n <= q {
            return Err(Error::InvalidParameter(format!("need n > q, got n = {n}, q = {q}")));
        }
        if inputs.iter().chain(mean_design.iter()).chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Dataset("design contains non-finite values".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if inputs.row(i) == inputs.row(j) {
                    return Err(Error::Dataset(format!("input rows {j} and {i} coincide")));
                }
            }
        }
        let r = mean_design.clone().qr().r();
        let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if r.diagonal().iter().any(|v| v.abs() <= 1e-12 * diag_max.max(1e-300)) {
            return Err(Error::Singular("mean design matrix is not of full column rank".into()));
        }
        let log_det_xtx = 2.0 * r.diagonal().iter().map(|v| v.abs().ln()).sum::<f64>();
        Ok(Self { inputs, mean_design, outputs, scaling: None, log_det_xtx })
    }

    /// Constant-mean design (`X = 1_n`).
    pub fn constant_mean(inputs: DMatrix<f64>, outputs: DVector<f64>) -> Result<Self> {
        let n = inputs.nrows();
        Self::new(inputs, DMatrix::from_element(n, 1, 1.0), outputs)
    }

    /// Standardizes the input columns; prediction points are transformed the
    /// same way.
    pub fn with_standardized_inputs(mut self) -> Self {
        assert!(self.scaling.is_none(), "inputs already standardized");
        let scaling = ColumnScaling::fit(&self.inputs);
        for (k, mut col) in self.inputs.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = (*v - scaling.center[k]) / scaling.scale[k];
            }
        }
        self.scaling = Some(scaling);
        self
    }

    pub fn n(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn k(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn q(&self) -> usize {
        self.mean_design.ncols()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn mean_design(&self) -> &DMatrix<f64> {
        &self.mean_design
    }

    pub fn outputs(&self) -> &DVector<f64> {
        &self.outputs
    }

    pub fn scaling(&self) -> Option<&ColumnScaling> {
        self.scaling.as_ref()
    }

    pub fn log_det_xtx(&self) -> f64 {
        self.log_det_xtx
    }

    /// Maps a raw input point into the coordinates used by the covariance.
    pub fn transform_point(&self, point: &[f64]) -> Vec<f64> {
        match &self.scaling {
            Some(s) => s.apply(point),
            None => point.to_vec(),
        }
    }

    /// Same design with row `i` removed; the input scaling is kept as is.
    pub fn without_row(&self, i: usize) -> Result<Self> {
        let n = self.n();
        if i >= n {
            return Err(Error::DimensionMismatch(format!("row {i} of {n}")));
        }
        let keep: Vec<usize> = (0..n).filter(|&r| r != i).collect();
        self.select_rows(&keep)
    }

    /// Design restricted to (and reordered by) `rows`.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let inputs = self.inputs.select_rows(rows);
        let mean_design = self.mean_design.select_rows(rows);
        let outputs = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.outputs[r]));
        let mut d = Self::new(inputs, mean_design, outputs)?;
        d.scaling = self.scaling.clone();
        Ok(d)
    }

    /// Copy with the outputs replaced.
    pub fn with_outputs(&self, outputs: DVector<f64>) -> Result<Self> {
        let mut d = Self::new(self.inputs.clone(), self.mean_design.clone(), outputs)?;
        d.scaling = self.scaling.clone();
        Ok(d)
    }
}

/// Log-scale range parameters, one per input dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RangeParams(Vec<f64>);

impl RangeParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite range parameter in {theta:?}")));
        }
        Ok(Self(theta))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// `1 / exp(theta_k)^2` per dimension.
pub fn inverse_squared_lengths(theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|t| (-2.0 * t).exp()).collect()
}

#[inline]
pub(crate) fn correlation(a: &[f64], b: &[f64], inv_l2: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..inv_l2.len() {
        let d = a[k] - b[k];
        s += d * d * inv_l2[k];
    }
    (-s).exp()
}

/// `V(theta) + nugget I` for the rows of `inputs`.
pub fn covariance_matrix(inputs: &DMatrix<f64>, theta: &[f64], nugget: f64) -> Result<DMatrix<f64>> {
    if theta.len() != inputs.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} range parameters for {} input columns",
            theta.len(),
            inputs.ncols()
        )));
    }
    if !(nugget >= 0.0) {
        return Err(Error::InvalidParameter(format!("nugget must be >= 0, got {nugget}")));
    }
    let n = inputs.nrows();
    let inv_l2 = inverse_squared_lengths(theta);
    let rows: Vec<Vec<f64>> = (0..n).map(|i| inputs.row(i).iter().cloned().collect()).collect();
    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        v[(i, i)] = 1.0 + nugget;
        for j in 0..i {
            let c = correlation(&rows[i], &rows[j], &inv_l2);
            v[(i, j)] = c;
            v[(j, i)] = c;
        }
    }
    Ok(v)
}

/// Diagonal inflation schedule used when factorizing `V(theta)`: start at
/// `initial`, multiply by `factor` after each failed Cholesky (a zero start
/// steps to 1e-8), give up beyond `max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuggetPolicy {
    pub initial: f64,
    pub max: f64,
    pub factor: f64,
}

impl Default for NuggetPolicy {
    fn default() -> Self {
        Self { initial: 1e-8, max: 1e-4, factor: 10.0 }
    }
}

impl NuggetPolicy {
    pub fn exact() -> Self {
        Self { initial: 0.0, ..Self::default() }
    }
}

/// Which scale estimate `alpha` to attach to a fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleEstimate {
    /// `G^2 / n`.
    Profile,
    /// `G^2 / (n - q)`.
    #[default]
    Reml,
}

/// Normal prior `theta_k ~ N(tau, nu_sq)`, independent across k.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaPrior {
    pub tau: f64,
    pub nu_sq: f64,
}

impl ThetaPrior {
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .map(|t| -0.5 * (LN_2PI + self.nu_sq.ln()) - (t - self.tau).powi(2) / (2.0 * self.nu_sq))
            .sum()
    }
}

/// Factorization of the model at a fixed `theta`.
#[derive(Clone, Debug, PartialEq)]
pub struct GpFactor {
    theta: Vec<f64>,
    nugget: f64,
    /// Lower Cholesky factor of `V + nugget I`.
    chol: DMatrix<f64>,
    log_det_v: f64,
    /// `L^{-1} X`.
    whitened_x: DMatrix<f64>,
    /// R of the thin QR of `L^{-1} X`; `X^T V^{-1} X = R^T R`.
    r_factor: DMatrix<f64>,
    log_det_xtvx: f64,
    beta: DVector<f64>,
    g_sq: f64,
    /// `V^{-1} (Z - X beta)`.
    resid_weights: DVector<f64>,
    n: usize,
    q: usize,
}

pub(crate) fn forward_substitute(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}

fn back_substitute_transpose(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= l[(j, i)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves `R^T a = u` for upper-triangular `R`.
pub(crate) fn solve_upper_transpose(r: &DMatrix<f64>, u: &mut [f64]) {
    let q = u.len();
    for i in 0..q {
        let mut s = u[i];
        for j in 0..i {
            s -= r[(j, i)] * u[j];
        }
        u[i] = s / r[(i, i)];
    }
}

fn solve_upper(r: &DMatrix<f64>, u: &mut [f64]) {
    let q = u.len();
    for i in (0..q).rev() {
        let mut s = u[i];
        for j in i + 1..q {
            s -= r[(i, j)] * u[j];
        }
        u[i] = s / r[(i, i)];
    }
}

impl GpFactor {
    pub fn new(design: &GpDesign, theta: &[f64], policy: &NuggetPolicy) -> Result<Self> {
        let n = design.n();
        let q = design.q();
        let base = covariance_matrix(design.inputs(), theta, 0.0)?;
        let mut nugget = policy.initial.max(0.0);
        let chol = loop {
            let mut v = base.clone();
            for i in 0..n {
                v[(i, i)] += nugget;
            }
            if let Some(c) = v.cholesky() {
                let l = c.l();
                if l.diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                    break l;
                }
            }
            if nugget >= policy.max {
                return Err(Error::NotPositiveDefinite(format!(
                    "V(theta) with nugget up to {} at theta = {theta:?}",
                    policy.max
                )));
            }
            nugget = if nugget == 0.0 { 1e-8f64.min(policy.max) } else { (nugget * policy.factor).min(policy.max) };
        };
        let log_det_v = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();

        let mut whitened_x = design.mean_design().clone();
        for mut col in whitened_x.column_iter_mut() {
            forward_substitute(&chol, col.as_mut_slice());
        }
        let mut zw: Vec<f64> = design.outputs().iter().cloned().collect();
        forward_substitute(&chol, &mut zw);

        let qr = whitened_x.clone().qr();
        let r_factor = qr.r();
        let qmat = qr.q();
        let diag_max = r_factor.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if r_factor.diagonal().iter().any(|v| !(v.abs() > 1e-12 * diag_max)) {
            return Err(Error::Singular("X^T V^{-1} X".into()));
        }
        let log_det_xtvx = 2.0 * r_factor.diagonal().iter().map(|v| v.abs().ln()).sum::<f64>();
        let zw_vec = DVector::from_column_slice(&zw);
        let mut beta: Vec<f64> = (qmat.transpose() * &zw_vec).iter().cloned().collect();
        solve_upper(&r_factor, &mut beta);
        let beta = DVector::from_vec(beta);

        let resid_w = &zw_vec - &whitened_x * &beta;
        // Residuals at round-off level mean the mean model explains the data.
        let g_sq = resid_w.norm_squared();
        let g_sq = if g_sq <= 1e-20 * zw_vec.norm_squared() { 0.0 } else { g_sq };
        let mut rw: Vec<f64> = resid_w.iter().cloned().collect();
        back_substitute_transpose(&chol, &mut rw);

        Ok(Self {
            theta: theta.to_vec(),
            nugget,
            chol,
            log_det_v,
            whitened_x,
            r_factor,
            log_det_xtvx,
            beta,
            g_sq,
            resid_weights: DVector::from_vec(rw),
            n,
            q,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det_v(&self) -> f64 {
        self.log_det_v
    }

    pub fn log_det_xtvx(&self) -> f64 {
        self.log_det_xtvx
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn g_sq(&self) -> f64 {
        self.g_sq
    }

    pub(crate) fn whitened_x(&self) -> &DMatrix<f64> {
        &self.whitened_x
    }

    pub(crate) fn r_factor(&self) -> &DMatrix<f64> {
        &self.r_factor
    }

    pub(crate) fn resid_weights(&self) -> &DVector<f64> {
        &self.resid_weights
    }

    pub fn alpha(&self, which: ScaleEstimate) -> f64 {
        match which {
            ScaleEstimate::Profile => self.g_sq / self.n as f64,
            ScaleEstimate::Reml => self.g_sq / (self.n - self.q) as f64,
        }
    }

    fn require_positive_g(&self) -> Result<()> {
        if self.g_sq > 0.0 && self.g_sq.is_finite() {
            Ok(())
        } else {
            Err(Error::Degenerate(format!(
                "G^2 = {} (outputs exactly explained by the mean model)",
                self.g_sq
            )))
        }
    }

    /// Profile negative log-likelihood `l*(theta)`.
    pub fn nll_profile(&self) -> Result<f64> {
        self.require_positive_g()?;
        let n = self.n as f64;
        Ok(0.5 * n * LN_2PI + 0.5 * n * (self.g_sq / n).ln() + 0.5 * self.log_det_v + 0.5 * n)
    }

    /// REML negative log-likelihood `l*_w(theta)`.
    pub fn nll_reml(&self, log_det_xtx: f64) -> Result<f64> {
        self.require_positive_g()?;
        let m = (self.n - self.q) as f64;
        Ok(0.5 * m * LN_2PI + 0.5 * m * (self.g_sq / m).ln() - 0.5 * log_det_xtx
            + 0.5 * self.log_det_xtvx
            + 0.5 * self.log_det_v
            + 0.5 * m)
    }

    /// Marginal negative log-posterior of `theta` with `(beta, alpha)`
    /// integrated out under `pi(theta) / alpha`.
    pub fn nll_bayes(&self, prior: &ThetaPrior) -> Result<f64> {
        self.require_positive_g()?;
        let m = (self.n - self.q) as f64;
        Ok(-prior.log_density(&self.theta) + 0.5 * self.log_det_v + 0.5 * m * self.g_sq.ln() + 0.5 * self.log_det_xtvx)
    }
}

/// GLS coefficients and `G^2 = Z^T H Z`.
pub fn gls_beta(design: &GpDesign, theta: &[f64]) -> Result<(Vec<f64>, f64)> {
    let f = GpFactor::new(design, theta, &NuggetPolicy::default())?;
    Ok((f.beta.iter().cloned().collect(), f.g_sq))
}

pub fn nll_profile(design: &GpDesign, theta: &[f64]) -> Result<f64> {
    GpFactor::new(design, theta, &NuggetPolicy::default())?.nll_profile()
}

pub fn nll_reml(design: &GpDesign, theta: &[f64]) -> Result<f64> {
    GpFactor::new(design, theta, &NuggetPolicy::default())?.nll_reml(design.log_det_xtx())
}

/// Ridge penalty `lambda * sum_k (theta_k - mean(theta))^2`.
pub fn ridge_penalty(theta: &[f64], lambda: f64) -> f64 {
    let mean = theta.iter().sum::<f64>() / theta.len() as f64;
    lambda * theta.iter().map(|t| (t - mean).powi(2)).sum::<f64>()
}

pub fn nll_reml_regularized(design: &GpDesign, theta: &[f64], lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("penalty must be >= 0, got {lambda}")));
    }
    Ok(nll_reml(design, theta)? + ridge_penalty(theta, lambda))
}

pub fn nll_bayes(design: &GpDesign, theta: &[f64], prior: &ThetaPrior) -> Result<f64> {
    if !(prior.nu_sq > 0.0) {
        return Err(Error::InvalidParameter(format!("prior variance must be > 0, got {}", prior.nu_sq)));
    }
    GpFactor::new(design, theta, &NuggetPolicy::default())?.nll_bayes(prior)
}

/// Log target for sampling `theta` from its marginal posterior; `-inf` where
/// the model cannot be evaluated.
pub fn log_posterior_theta(design: &GpDesign, prior: &ThetaPrior, policy: &NuggetPolicy, theta: &[f64]) -> f64 {
    match GpFactor::new(design, theta, policy).and_then(|f| f.nll_bayes(prior)) {
        Ok(v) if v.is_finite() => -v,
        _ => f64::NEG_INFINITY,
    }
}

/// Surrogate fitted (or evaluated) at one `theta`.
#[derive(Clone, Debug)]
pub struct GpFit {
    factor: GpFactor,
    pub scale_estimate: ScaleEstimate,
    /// Minimized objective value, for optimizer fits.
    pub objective: Option<f64>,
    pub lambda: Option<f64>,
    /// Finite-difference Hessian of the minimized objective at `theta`.
    pub hessian: Option<DMatrix<f64>>,
    /// Coordinates that ended on the optimization box.
    pub at_bounds: Vec<usize>,
}

impl GpFit {
    /// Evaluates the model at a fixed `theta` (no optimization). Outputs
    /// explained exactly by the mean model give `alpha_hat = 0`.
    pub fn at_theta(design: &GpDesign, theta: &[f64], policy: &NuggetPolicy, scale_estimate: ScaleEstimate) -> Result<Self> {
        let factor = GpFactor::new(design, theta, policy)?;
        Ok(Self { factor, scale_estimate, objective: None, lambda: None, hessian: None, at_bounds: Vec::new() })
    }

    pub fn factor(&self) -> &GpFactor {
        &self.factor
    }

    pub fn theta(&self) -> &[f64] {
        &self.factor.theta
    }

    pub fn alpha_hat(&self) -> f64 {
        self.factor.alpha(self.scale_estimate)
    }

    pub fn beta_hat(&self) -> Vec<f64> {
        self.factor.beta.iter().cloned().collect()
    }

    pub fn nugget(&self) -> f64 {
        self.factor.nugget
    }

    /// True when the fit deserves a second look: a coordinate on the box or a
    /// Hessian that is not positive definite.
    pub fn flagged(&self) -> bool {
        !self.at_bounds.is_empty()
            || self.hessian.as_ref().map(|h| h.clone().cholesky().is_none()).unwrap_or(false)
    }

    pub fn record(&self) -> GpFitRecord {
        GpFitRecord {
            theta: self.theta().to_vec(),
            scale_estimate: self.scale_estimate,
            alpha_hat: self.alpha_hat(),
            alpha_profile: self.factor.alpha(ScaleEstimate::Profile),
            alpha_reml: self.factor.alpha(ScaleEstimate::Reml),
            beta_hat: self.beta_hat(),
            g_sq: self.factor.g_sq,
            nugget: self.nugget(),
            objective: self.objective,
            lambda: self.lambda,
            hessian: self.hessian.as_ref().map(matrix_rows),
            at_bounds: self.at_bounds.clone(),
            flagged: self.flagged(),
        }
    }

    /// Rebuilds a fit from its serialized record by refactorizing at the
    /// recorded `theta`.
    pub fn from_record(design: &GpDesign, record: &GpFitRecord, policy: &NuggetPolicy) -> Result<Self> {
        let mut fit = Self::at_theta(design, &record.theta, policy, record.scale_estimate)?;
        fit.objective = record.objective;
        fit.lambda = record.lambda;
        fit.hessian = record.hessian.as_ref().map(|rows| {
            let k = rows.len();
            DMatrix::from_fn(k, k, |i, j| rows[i][j])
        });
        fit.at_bounds = record.at_bounds.clone();
        Ok(fit)
    }
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

/// JSON form of a [`GpFit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpFitRecord {
    pub theta: Vec<f64>,
    pub scale_estimate: ScaleEstimate,
    pub alpha_hat: f64,
    pub alpha_profile: f64,
    pub alpha_reml: f64,
    pub beta_hat: Vec<f64>,
    pub g_sq: f64,
    pub nugget: f64,
    pub objective: Option<f64>,
    pub lambda: Option<f64>,
    pub hessian: Option<Vec<Vec<f64>>>,
    pub at_bounds: Vec<usize>,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub lower: f64,
    pub upper: f64,
    /// Standard deviation of the random starting points around 0.
    pub start_sd: f64,
    pub nugget: NuggetPolicy,
    pub scale_estimate: ScaleEstimate,
    /// Relative finite-difference step of the reported Hessian.
    pub hessian_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            seed: 0,
            lower: -10.0,
            upper: 10.0,
            start_sd: 2.0,
            nugget: NuggetPolicy::default(),
            scale_estimate: ScaleEstimate::Reml,
            hessian_step: 1e-4,
        }
    }
}

/// Minimizes the regularized REML objective over `theta` in the box with
/// multi-start quasi-Newton (simplex fallback).
pub fn fit_reml(design: &GpDesign, lambda: f64, opts: &FitOptions) -> Result<GpFit> {
    if opts.restarts == 0 {
        return Err(Error::InvalidParameter("at least one optimizer start is required".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("penalty must be >= 0, got {lambda}")));
    }
    let k = design.k();
    let lo = vec![opts.lower; k];
    let hi = vec![opts.upper; k];
    let log_det_xtx = design.log_det_xtx();
    let policy = opts.nugget;
    let objective = |theta: &[f64]| -> f64 {
        match GpFactor::new(design, theta, &policy).and_then(|f| f.nll_reml(log_det_xtx)) {
            Ok(v) => v + ridge_penalty(theta, lambda),
            Err(_) => f64::INFINITY,
        }
    };

    let starts: Vec<Vec<f64>> = (0..opts.restarts)
        .map(|s| {
            let mut rng = seed::derived_stream(opts.seed, "fit-reml-start", &[s as u64]);
            (0..k)
                .map(|_| {
                    let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                    (opts.start_sd * z).clamp(opts.lower, opts.upper)
                })
                .collect()
        })
        .collect();

    let results: Vec<optim::OptimResult> = starts
        .par_iter()
        .map(|x0| {
            let r = optim::bfgs_box(&objective, x0, &lo, &hi, &OptimOptions::default());
            if r.converged && r.f.is_finite() {
                return r;
            }
            let from = if r.f.is_finite() { r.x.clone() } else { x0.clone() };
            let nm = optim::nelder_mead_box(&objective, &from, &lo, &hi, 0.5, 4000 * k.max(1), 1e-12);
            if nm.f < r.f || !r.f.is_finite() {
                nm
            } else {
                r
            }
        })
        .collect();

    let best = results
        .into_iter()
        .filter(|r| r.f.is_finite())
        .min_by(|a, b| a.f.total_cmp(&b.f).then_with(|| lexicographic(&a.x, &b.x)))
        .ok_or_else(|| Error::NonConvergence {
            what: "regularized REML: every optimizer start failed".into(),
            iterations: opts.restarts,
        })?;

    let hessian = numdiff::hessian(&objective, &best.x, opts.hessian_step);
    let at_bounds = best
        .x
        .iter()
        .enumerate()
        .filter(|(_, v)| (**v - opts.lower).abs() < 1e-6 || (**v - opts.upper).abs() < 1e-6)
        .map(|(i, _)| i)
        .collect();
    let mut fit = GpFit::at_theta(design, &best.x, &policy, opts.scale_estimate)?;
    fit.objective = Some(best.f);
    fit.lambda = Some(lambda);
    fit.hessian = Some(hessian);
    fit.at_bounds = at_bounds;
    if fit.flagged() {
        log::warn!("REML fit flagged: theta on the box at {:?} or non-SPD Hessian", fit.at_bounds);
    }
    Ok(fit)
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Empirical-Bayes prior hyperparameters from a REML fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuEstimate {
    /// Mean of the fitted `theta`.
    pub tau_hat: f64,
    /// Mean diagonal of the inverse Hessian.
    pub nu_sq_hat: f64,
    /// The Hessian was not positive definite and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

pub fn hessian_nu_estimate(theta: &[f64], hessian: &DMatrix<f64>) -> Result<NuEstimate> {
    let k = theta.len();
    if hessian.nrows() != k || hessian.ncols() != k || k == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} Hessian for {k} range parameters",
            hessian.nrows(),
            hessian.ncols()
        )));
    }
    let tau_hat = theta.iter().sum::<f64>() / k as f64;
    let (inv, pseudo) = match hessian.clone().cholesky() {
        Some(c) => (c.inverse(), false),
        None => {
            log::warn!("Hessian is not positive definite; using its pseudo-inverse");
            let inv = hessian
                .clone()
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::Singular(format!("Hessian pseudo-inverse: {e}")))?;
            (inv, true)
        }
    };
    let nu_sq_hat = inv.diagonal().iter().sum::<f64>() / k as f64;
    Ok(NuEstimate { tau_hat, nu_sq_hat, pseudo_inverse: pseudo })
}

/// Diagonal of the inverse Hessian (pseudo-inverse when not positive
/// definite).
pub fn inverse_hessian_diagonal(hessian: &DMatrix<f64>) -> Result<Vec<f64>> {
    let inv = match hessian.clone().cholesky() {
        Some(c) => c.inverse(),
        None => hessian
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Singular(format!("Hessian pseudo-inverse: {e}")))?,
    };
    Ok(inv.diagonal().iter().cloned().collect())
}

impl GpFit {
    pub fn nu_estimate(&self) -> Result<NuEstimate> {
        let h = self
            .hessian
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("fit has no Hessian".into()))?;
        hessian_nu_estimate(self.theta(), h)
    }
}
