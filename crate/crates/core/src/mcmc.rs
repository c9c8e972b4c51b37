//! Adaptive Metropolis sampling (Haario, Saksman & Tamminen 2001) with
//! thinning, burn-in removal and chain diagnostics.
//!
//! For the first `non_adaptive` steps the Gaussian random-walk proposal uses
//! `scaling * init_cov`. Afterwards it uses `scaling * (C_t + epsilon * I)`,
//! where `C_t` is the empirical covariance of every state visited so far.
//! The running mean and covariance are updated at each step; the Cholesky
//! factor of the proposal is refreshed every `update_interval` steps. Every
//! `thinning`-th state is retained.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numdiff;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmSettings {
    /// Total number of Metropolis steps `t`.
    pub iterations: usize,
    /// Proposal scaling `s_d`; `None` means `2.4^2 / d`.
    pub scaling: Option<f64>,
    /// Covariance regularization `epsilon`.
    pub epsilon: f64,
    /// Initial non-adaptive period `t0`.
    pub non_adaptive: usize,
    /// Steps between proposal-covariance refreshes `t1`.
    pub update_interval: usize,
    /// Output thinning interval `t2`.
    pub thinning: usize,
}

impl Default for AmSettings {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            scaling: None,
            epsilon: 1e-4,
            non_adaptive: 10_000,
            update_interval: 10,
            thinning: 100,
        }
    }
}

impl AmSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("AM settings: {m}")));
        if self.thinning == 0 || self.update_interval == 0 {
            return bad("thinning and update interval must be positive");
        }
        if self.iterations == 0 || !self.iterations.is_multiple_of(self.thinning) {
            return bad("iterations must be a positive multiple of the thinning interval");
        }
        if self.non_adaptive >= self.iterations {
            return bad("non-adaptive period must be shorter than the run");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if let Some(s) = self.scaling {
            if !(s > 0.0) {
                return bad("scaling must be positive");
            }
        }
        Ok(())
    }

    pub fn scaling_for(&self, dim: usize) -> f64 {
        self.scaling.unwrap_or(2.4 * 2.4 / dim as f64)
    }

    pub fn retained_rows(&self) -> usize {
        self.iterations / self.thinning
    }
}

/// Retained draws of one sampler run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    draws: Vec<Vec<f64>>,
    dim: usize,
    thinning: usize,
    /// Burn-in fraction recommended for (or already applied to) this chain.
    pub burn_in_fraction: f64,
    /// Rows removed from the front so far.
    pub burn_in_removed: usize,
    pub acceptance_rate: f64,
    /// Geweke z-scores of the current rows, if they could be computed.
    pub geweke_z: Option<Vec<f64>>,
}

pub const DEFAULT_BURN_IN: f64 = 0.20;

impl PosteriorChain {
    pub fn from_draws(draws: Vec<Vec<f64>>, thinning: usize, acceptance_rate: f64) -> Result<Self> {
        let dim = draws.first().map(|r| r.len()).unwrap_or(0);
        if draws.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch("chain rows differ in length".into()));
        }
        let mut chain = Self {
            draws,
            dim,
            thinning: thinning.max(1),
            burn_in_fraction: DEFAULT_BURN_IN,
            burn_in_removed: 0,
            acceptance_rate,
            geweke_z: None,
        };
        chain.refresh_diagnostics();
        Ok(chain)
    }

    fn refresh_diagnostics(&mut self) {
        self.geweke_z = geweke(self, 0.1, 0.5, GewekeVariance::Plain).ok();
    }

    pub fn draws(&self) -> &[Vec<f64>] {
        &self.draws
    }

    pub fn rows(&self) -> usize {
        self.draws.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|r| r[k]).collect()
    }

    pub fn thinning(&self) -> usize {
        self.thinning
    }

    /// Sampler iteration that produced row `r` of the current draws.
    pub fn iteration_of(&self, r: usize) -> usize {
        (self.burn_in_removed + r + 1) * self.thinning
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim).map(|k| mean(&self.column(k))).collect()
    }
}

/// Default initial proposal covariance: the inverse finite-difference Hessian
/// of `-log_target` at `init` when that is positive definite, else `0.1 I`.
pub fn default_init_cov<F: Fn(&[f64]) -> f64>(log_target: &F, init: &[f64]) -> DMatrix<f64> {
    let d = init.len();
    let neg = |x: &[f64]| -log_target(x);
    let h = numdiff::hessian(&neg, init, 1e-4);
    if h.iter().all(|v| v.is_finite()) {
        if let Some(chol) = h.clone().cholesky() {
            let inv = chol.inverse();
            if inv.iter().all(|v| v.is_finite()) {
                return inv;
            }
        }
    }
    DMatrix::identity(d, d) * 0.1
}

struct RunningMoments {
    count: f64,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl RunningMoments {
    fn new(x: &DVector<f64>) -> Self {
        let d = x.len();
        Self { count: 1.0, mean: x.clone(), scatter: DMatrix::zeros(d, d) }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.count += 1.0;
        let delta = x - &self.mean;
        self.mean += &delta / self.count;
        let delta2 = x - &self.mean;
        self.scatter += &delta * delta2.transpose();
    }

    fn covariance(&self) -> DMatrix<f64> {
        let mut c = &self.scatter / (self.count - 1.0).max(1.0);
        // Keep exact symmetry despite rank-1 rounding.
        let ct = c.transpose();
        c += ct;
        c *= 0.5;
        c
    }
}

/// Runs the adaptive Metropolis sampler.
///
/// `init_cov` of `None` selects [`default_init_cov`].
pub fn am_sample<F, R>(
    log_target: F,
    init: &[f64],
    init_cov: Option<DMatrix<f64>>,
    settings: &AmSettings,
    rng: &mut R,
) -> Result<PosteriorChain>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    settings.validate()?;
    let d = init.len();
    if d == 0 {
        return Err(Error::DimensionMismatch("empty initial state".into()));
    }
    let mut lp = log_target(init);
    if !lp.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "log target at the initial state is {lp}"
        )));
    }
    let c0 = init_cov.unwrap_or_else(|| default_init_cov(&log_target, init));
    if c0.nrows() != d || c0.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "initial covariance is {}x{}, state has {d} coordinates",
            c0.nrows(),
            c0.ncols()
        )));
    }
    let sd = settings.scaling_for(d);
    let l0 = (c0 * sd)
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("initial proposal covariance".into()))?
        .l();

    let mut x = DVector::from_column_slice(init);
    let mut proposal = x.clone();
    let mut moments = RunningMoments::new(&x);
    let mut chol = l0.clone();
    let mut accepted = 0usize;
    let mut draws = Vec::with_capacity(settings.retained_rows());
    let eye = DMatrix::<f64>::identity(d, d);
    let mut z = DVector::<f64>::zeros(d);

    for step in 1..=settings.iterations {
        if step > settings.non_adaptive && (step - settings.non_adaptive - 1).is_multiple_of(settings.update_interval) {
            let c = (moments.covariance() + &eye * settings.epsilon) * sd;
            chol = c
                .cholesky()
                .ok_or_else(|| {
                    Error::NotPositiveDefinite(format!("adapted proposal covariance at step {step}"))
                })?
                .l();
        }
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        proposal.copy_from(&x);
        proposal.gemv(1.0, &chol, &z, 1.0);
        let lp_new = log_target(proposal.as_slice());
        let u: f64 = rng.random();
        if lp_new.is_finite() && u.ln() < lp_new - lp {
            std::mem::swap(&mut x, &mut proposal);
            lp = lp_new;
            accepted += 1;
        }
        moments.push(&x);
        if step % settings.thinning == 0 {
            draws.push(x.as_slice().to_vec());
        }
    }

    let rate = accepted as f64 / settings.iterations as f64;
    if !(0.2..=0.5).contains(&rate) {
        log::debug!("adaptive Metropolis acceptance rate {rate:.3} outside [0.2, 0.5]");
    }
    PosteriorChain::from_draws(draws, settings.thinning, rate)
}

/// Drops the first `floor(fraction * rows)` rows.
pub fn remove_burn_in(chain: &PosteriorChain, fraction: f64) -> Result<PosteriorChain> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!(
            "burn-in fraction must lie in [0, 1), got {fraction}"
        )));
    }
    let drop = (fraction * chain.rows() as f64).floor() as usize;
    let mut out = chain.clone();
    out.draws = chain.draws[drop..].to_vec();
    out.burn_in_fraction = fraction;
    out.burn_in_removed = chain.burn_in_removed + drop;
    out.refresh_diagnostics();
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GewekeVariance {
    /// Sample variance over the window length.
    #[default]
    Plain,
    /// Spectral density at zero with a Bartlett lag window spanning 4% of the
    /// window length.
    Spectral,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn autocovariance(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

fn variance_of_mean(x: &[f64], method: GewekeVariance) -> f64 {
    let n = x.len() as f64;
    let m = mean(x);
    match method {
        GewekeVariance::Plain => {
            let s2 = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
            s2 / n
        }
        GewekeVariance::Spectral => {
            let max_lag = ((0.04 * n).floor() as usize).max(1).min(x.len() - 1);
            let mut s = autocovariance(x, m, 0);
            for k in 1..=max_lag {
                let w = 1.0 - k as f64 / (max_lag as f64 + 1.0);
                s += 2.0 * w * autocovariance(x, m, k);
            }
            s.max(0.0) / n
        }
    }
}

/// Geweke z-scores comparing the first `first_frac` and last `last_frac` of
/// the rows, one per coordinate.
pub fn geweke(chain: &PosteriorChain, first_frac: f64, last_frac: f64, method: GewekeVariance) -> Result<Vec<f64>> {
    if !(first_frac > 0.0 && last_frac > 0.0 && first_frac + last_frac <= 1.0) {
        return Err(Error::InvalidParameter("Geweke window fractions".into()));
    }
    let n = chain.rows();
    let na = (first_frac * n as f64).floor() as usize;
    let nb = (last_frac * n as f64).floor() as usize;
    if na < 10 || nb < 10 {
        return Err(Error::InvalidParameter(format!(
            "Geweke windows too short ({na} and {nb} draws, need 10)"
        )));
    }
    (0..chain.dim())
        .map(|k| {
            let col = chain.column(k);
            let a = &col[..na];
            let b = &col[n - nb..];
            let va = variance_of_mean(a, method);
            let vb = variance_of_mean(b, method);
            let denom = (va + vb).sqrt();
            if !(denom > 0.0) {
                return Err(Error::Degenerate(format!("coordinate {k} has zero variance in a Geweke window")));
            }
            Ok((mean(a) - mean(b)) / denom)
        })
        .collect()
}

/// Effective sample size of one coordinate (Geyer's initial monotone
/// sequence estimator).
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(x);
    let c0 = autocovariance(x, m, 0);
    if !(c0 > 0.0) {
        return n as f64;
    }
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocovariance(x, m, lag) + autocovariance(x, m, lag + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64 * (n as f64).log10().max(1.0))
}

/// Monte Carlo standard error of the mean of one coordinate.
pub fn mc_standard_error(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = mean(x);
    let s2 = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (s2 / effective_sample_size(x)).sqrt()
}

/// Cumulative means per coordinate; row `r` averages rows `0..=r`.
pub fn running_average(chain: &PosteriorChain) -> Vec<Vec<f64>> {
    let mut sums = vec![0.0; chain.dim()];
    chain
        .draws()
        .iter()
        .enumerate()
        .map(|(r, row)| {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
            sums.iter().map(|s| s / (r + 1) as f64).collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub values: Vec<f64>,
}

pub fn trace_export(chain: &PosteriorChain) -> Vec<TraceRow> {
    chain
        .draws()
        .iter()
        .enumerate()
        .map(|(r, row)| TraceRow { iteration: chain.iteration_of(r), values: row.clone() })
        .collect()
}

/// JSON sidecar written next to a chain CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSidecar {
    pub columns: Vec<String>,
    pub settings: AmSettings,
    pub acceptance_rate: f64,
    pub geweke_z: Option<Vec<f64>>,
    pub burn_in_fraction: f64,
    pub burn_in_removed: usize,
    pub thinning: usize,
}

/// Writes the chain rows as CSV with an `iteration` column followed by
/// `columns`.
pub fn write_chain_csv(path: &Path, chain: &PosteriorChain, columns: &[String]) -> Result<()> {
    if columns.len() != chain.dim() && !chain.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} column names for a {}-dimensional chain",
            columns.len(),
            chain.dim()
        )));
    }
    let csv_err = |source| Error::Csv { path: path.display().to_string(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["iteration".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for row in trace_export(chain) {
        let mut rec = vec![row.iteration.to_string()];
        rec.extend(row.values.iter().map(|v| format_f64(*v)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// Reads rows written by [`write_chain_csv`]; returns the column names and
/// the draws.
pub fn read_chain_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let csv_err = |source| Error::Csv { path: path.display().to_string(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header.first().map(String::as_str) != Some("iteration") {
        return Err(Error::Dataset(format!("{}: first column must be 'iteration'", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Dataset(format!("{}: bad number '{s}': {e}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header[1..].to_vec(), rows))
}

/// Shortest round-trip decimal form.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}
