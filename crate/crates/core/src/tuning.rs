//! Leave-one-out cross-validation for the REML penalty and for the Normal
//! prior hyperparameters of the range parameters.
//!
//! Every (candidate, fold) task seeds its optimizer or sampler from the
//! master seed and the fold index only, so all candidates see common random
//! numbers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpcore::{self, FitOptions, GpDesign, GpFit, NuggetPolicy, ScaleEstimate, ThetaPrior};
use crate::kriging::{self, Predictor};
use crate::mcmc::{self, AmSettings, PosteriorChain};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CvCandidate {
    Lambda { lambda: f64 },
    Prior { tau: f64, nu_sq: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub candidates: Vec<CvCandidate>,
    /// Total loss per candidate; `+inf` marks a failed candidate.
    pub scores: Vec<f64>,
    /// Per candidate, the loss contributed by each fold (mean over retained
    /// draws for the prior search).
    pub fold_losses: Vec<Vec<f64>>,
    pub winner: usize,
    /// Failure message per candidate, if any.
    pub failures: Vec<Option<String>>,
}

impl CvReport {
    fn assemble(candidates: Vec<CvCandidate>, per_candidate: Vec<std::result::Result<Vec<f64>, String>>) -> Result<Self> {
        let mut scores = Vec::with_capacity(per_candidate.len());
        let mut fold_losses = Vec::with_capacity(per_candidate.len());
        let mut failures = Vec::with_capacity(per_candidate.len());
        for r in per_candidate {
            match r {
                Ok(losses) => {
                    scores.push(losses.iter().sum());
                    fold_losses.push(losses);
                    failures.push(None);
                }
                Err(msg) => {
                    scores.push(f64::INFINITY);
                    fold_losses.push(Vec::new());
                    failures.push(Some(msg));
                }
            }
        }
        let mut winner = None;
        for (q, s) in scores.iter().enumerate() {
            if s.is_finite() && winner.is_none_or(|w: usize| *s < scores[w]) {
                winner = Some(q);
            }
        }
        let winner = winner.ok_or_else(|| Error::NonConvergence {
            what: format!("cross-validation: all {} candidates failed", scores.len()),
            iterations: 0,
        })?;
        Ok(Self { candidates, scores, fold_losses, winner, failures })
    }

    pub fn winning_candidate(&self) -> CvCandidate {
        self.candidates[self.winner]
    }
}

fn fold_task<T: Send>(
    n_candidates: usize,
    n_folds: usize,
    task: impl Fn(usize, usize) -> Result<T> + Sync + Send,
) -> Vec<Vec<Result<T>>> {
    let flat: Vec<Result<T>> = (0..n_candidates * n_folds)
        .into_par_iter()
        .map(|idx| task(idx / n_folds, idx % n_folds))
        .collect();
    let mut out: Vec<Vec<Result<T>>> = (0..n_candidates).map(|_| Vec::with_capacity(n_folds)).collect();
    for (idx, r) in flat.into_iter().enumerate() {
        out[idx / n_folds].push(r);
    }
    out
}

fn collect_candidate(fold_results: Vec<Result<f64>>) -> std::result::Result<Vec<f64>, String> {
    fold_results
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| format!("fold {i}: {e}")))
        .collect()
}

/// Seed of the optimizer or sampler run on fold `fold`.
pub fn fold_seed(master: u64, label: &str, fold: usize) -> u64 {
    seed::derive_seed(master, label, &[fold as u64])
}

/// Squared leave-one-out error of fold `i` after fitting the regularized
/// REML model on the remaining rows.
pub fn lambda_fold_loss(design: &GpDesign, lambda: f64, fold: usize, opts: &FitOptions) -> Result<f64> {
    let reduced = design.without_row(fold)?;
    let fit = gpcore::fit_reml(&reduced, lambda, &FitOptions { seed: fold_seed(opts.seed, "cv-lambda", fold), ..opts.clone() })?;
    let point: Vec<f64> = design.inputs().row(fold).iter().cloned().collect();
    let x0: Vec<f64> = design.mean_design().row(fold).iter().cloned().collect();
    let p = Predictor::new(&fit, &reduced)?.predict_scaled(&point, &x0)?;
    Ok((design.outputs()[fold] - p.z_hat).powi(2))
}

/// Cross-validates the penalty `lambda`. `opts.seed` is the master seed.
pub fn cv_lambda(design: &GpDesign, lambdas: &[f64], opts: &FitOptions) -> Result<CvReport> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("no penalty candidates".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::InvalidParameter(format!("penalty candidate {bad} is not >= 0")));
    }
    let n = design.n();
    if n < 3 {
        return Err(Error::InvalidParameter(format!("leave-one-out needs n >= 3, got {n}")));
    }
    let grid = fold_task(lambdas.len(), n, |q, i| lambda_fold_loss(design, lambdas[q], i, opts));
    let candidates = lambdas.iter().map(|&lambda| CvCandidate::Lambda { lambda }).collect();
    CvReport::assemble(candidates, grid.into_iter().map(collect_candidate).collect())
}

/// Settings shared by every sampler run inside the prior search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorCvSettings {
    pub am: AmSettings,
    pub burn_in: f64,
    pub master_seed: u64,
    pub nugget: NuggetPolicy,
    pub scale_estimate: ScaleEstimate,
}

impl Default for PriorCvSettings {
    fn default() -> Self {
        Self {
            am: AmSettings { iterations: 20_000, ..AmSettings::default() },
            burn_in: 0.2,
            master_seed: 0,
            nugget: NuggetPolicy::default(),
            scale_estimate: ScaleEstimate::Reml,
        }
    }
}

/// Samples the range parameters' marginal posterior under `prior`, starting
/// at the prior mean; burn-in is removed.
pub fn sample_theta_posterior(
    design: &GpDesign,
    prior: &ThetaPrior,
    am: &AmSettings,
    burn_in: f64,
    nugget: &NuggetPolicy,
    seed: u64,
) -> Result<PosteriorChain> {
    let target = |theta: &[f64]| gpcore::log_posterior_theta(design, prior, nugget, theta);
    let init = vec![prior.tau; design.k()];
    let init_cov = mcmc::default_init_cov(&target, &init);
    let mut rng = seed::stream(seed);
    let chain = mcmc::am_sample(target, &init, Some(init_cov), am, &mut rng)?;
    mcmc::remove_burn_in(&chain, burn_in)
}

/// Leave-one-out sampler run for fold `i`: the chain on the reduced data.
pub fn prior_fold_chain(design: &GpDesign, prior: &ThetaPrior, fold: usize, settings: &PriorCvSettings) -> Result<PosteriorChain> {
    let reduced = design.without_row(fold)?;
    sample_theta_posterior(
        &reduced,
        prior,
        &settings.am,
        settings.burn_in,
        &settings.nugget,
        fold_seed(settings.master_seed, "cv-prior", fold),
    )
}

/// Squared errors of the held-out row, one per retained draw.
pub fn draw_losses(design: &GpDesign, fold: usize, chain: &PosteriorChain, settings: &PriorCvSettings) -> Result<Vec<f64>> {
    chain
        .draws()
        .iter()
        .map(|theta| {
            let p = kriging::loo_predict_one(design, fold, theta, &settings.nugget, settings.scale_estimate)?;
            Ok((design.outputs()[fold] - p.z_hat).powi(2))
        })
        .collect()
}

/// Cross-validates `(tau, nu_sq)` candidates. The score of a candidate is
/// the mean over retained draws of the summed fold losses.
pub fn cv_hyperparams(design: &GpDesign, candidates: &[ThetaPrior], settings: &PriorCvSettings) -> Result<CvReport> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no prior candidates".into()));
    }
    if let Some(bad) = candidates.iter().find(|c| !(c.nu_sq > 0.0) || !c.tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("invalid prior candidate {bad:?}")));
    }
    settings.am.validate()?;
    let n = design.n();
    if n < 3 {
        return Err(Error::InvalidParameter(format!("leave-one-out needs n >= 3, got {n}")));
    }
    let grid = fold_task(candidates.len(), n, |q, i| {
        let chain = prior_fold_chain(design, &candidates[q], i, settings)?;
        let losses = draw_losses(design, i, &chain, settings)?;
        if losses.is_empty() {
            return Err(Error::InvalidParameter("no draws retained after burn-in".into()));
        }
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    });
    let cands = candidates.iter().map(|c| CvCandidate::Prior { tau: c.tau, nu_sq: c.nu_sq }).collect();
    CvReport::assemble(cands, grid.into_iter().map(collect_candidate).collect())
}

/// Fit used after tuning: the regularized REML fit at the winning penalty.
pub fn refit_at_winner(design: &GpDesign, report: &CvReport, opts: &FitOptions) -> Result<GpFit> {
    match report.winning_candidate() {
        CvCandidate::Lambda { lambda } => gpcore::fit_reml(design, lambda, opts),
        CvCandidate::Prior { .. } => Err(Error::InvalidParameter("report is not a penalty search".into())),
    }
}
