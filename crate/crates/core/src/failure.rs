//! Latin hypercube designs and posterior simulation of the exceedance
//! probability.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Open01};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::dists::{self, Family, InputParams};
use crate::error::{Error, Result};
use crate::gpcore::{GpDesign, GpFit, NuggetPolicy, ScaleEstimate};
use crate::kriging::Predictor;
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct LhsDesign {
    /// Stratified uniforms, n x K.
    pub u: DMatrix<f64>,
    /// Inputs after the inverse-CDF transform, n x K.
    pub s: DMatrix<f64>,
}

/// One point per equal-probability stratum in every column, strata randomly
/// paired across columns.
pub fn lhs_sample<R: Rng + ?Sized>(n: usize, marginals: &[InputParams], rng: &mut R) -> Result<LhsDesign> {
    if n == 0 {
        return Err(Error::InvalidParameter("design needs at least one row".into()));
    }
    let k = marginals.len();
    let mut u = DMatrix::zeros(n, k);
    let mut s = DMatrix::zeros(n, k);
    let mut strata: Vec<usize> = (0..n).collect();
    for (c, m) in marginals.iter().enumerate() {
        strata.shuffle(rng);
        for (r, &stratum) in strata.iter().enumerate() {
            let w: f64 = Open01.sample(rng);
            let v = ((stratum as f64 + w) / n as f64).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
            u[(r, c)] = v;
            s[(r, c)] = m.quantile(v);
        }
    }
    Ok(LhsDesign { u, s })
}

/// `P(Z > z_crit)` for `Z ~ N(z_hat, s0^2)`, via the complementary error
/// function so that far-tail values do not round to zero. A zero `s0` gives
/// the indicator of `z_hat > z_crit`.
pub fn exceedance_probability(z_hat: f64, s0: f64, z_crit: f64) -> f64 {
    if s0 > 0.0 {
        0.5 * erfc((z_crit - z_hat) / (s0 * std::f64::consts::SQRT_2))
    } else if z_hat > z_crit {
        1.0
    } else {
        0.0
    }
}

/// Retained posterior draws of one input variable's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct InputPosterior {
    pub name: String,
    pub family: Family,
    pub draws: Vec<InputParams>,
}

impl InputPosterior {
    pub fn new(name: impl Into<String>, family: Family, draws: Vec<InputParams>) -> Result<Self> {
        let name = name.into();
        if draws.is_empty() {
            return Err(Error::InvalidParameter(format!("posterior of {name} has no draws")));
        }
        if let Some(d) = draws.iter().find(|d| d.family() != family) {
            return Err(Error::InvalidParameter(format!("{name}: draw {d:?} is not {}", family.name())));
        }
        Ok(Self { name, family, draws })
    }

    /// A point mass at `params`.
    pub fn point(name: impl Into<String>, params: InputParams) -> Self {
        Self { name: name.into(), family: params.family(), draws: vec![params] }
    }
}

/// Range parameters for the simulation: fixed (Setting A) or drawn from a
/// posterior chain each outer iteration (Setting B).
#[derive(Clone, Debug, PartialEq)]
pub enum ThetaDraws {
    Fixed(Vec<f64>),
    Chain(Vec<Vec<f64>>),
}

impl ThetaDraws {
    fn rows(&self) -> &[Vec<f64>] {
        match self {
            ThetaDraws::Fixed(t) => std::slice::from_ref(t),
            ThetaDraws::Chain(c) => c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PfSettings {
    /// Outer (posterior) iterations.
    pub outer: usize,
    /// Inner (input) iterations per outer iteration.
    pub inner: usize,
    pub z_crit: f64,
    pub seed: u64,
    pub nugget: NuggetPolicy,
    pub scale_estimate: ScaleEstimate,
}

impl Default for PfSettings {
    fn default() -> Self {
        Self {
            outer: 2000,
            inner: 1000,
            z_crit: 3.0,
            seed: 0,
            nugget: NuggetPolicy::default(),
            scale_estimate: ScaleEstimate::Reml,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailurePosterior {
    pub p: Vec<f64>,
    pub z_crit: f64,
    pub outer: usize,
    pub inner: usize,
}

/// Draws per outer iteration `i` come from the stream derived from
/// `(seed, "pf-outer", i)`: first one row index per input chain, then one for
/// the theta chain, then `inner` input vectors.
pub fn simulate_pf(
    inputs: &[InputPosterior],
    theta: &ThetaDraws,
    design: &GpDesign,
    settings: &PfSettings,
) -> Result<FailurePosterior> {
    if settings.outer == 0 || settings.inner == 0 {
        return Err(Error::InvalidParameter("outer and inner iteration counts must be >= 1".into()));
    }
    if inputs.len() != design.k() {
        return Err(Error::DimensionMismatch(format!(
            "{} input posteriors for a {}-input surrogate",
            inputs.len(),
            design.k()
        )));
    }
    if design.q() != 1 {
        return Err(Error::DimensionMismatch("exceedance simulation needs a constant-mean surrogate".into()));
    }
    let rows = theta.rows();
    if rows.is_empty() {
        return Err(Error::InvalidParameter("theta chain is empty".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != design.k()) {
        return Err(Error::DimensionMismatch(format!("theta draw has {} entries, expected {}", r.len(), design.k())));
    }
    if let Some(v) = inputs.iter().find(|v| v.draws.is_empty()) {
        return Err(Error::InvalidParameter(format!("posterior of {} has no draws", v.name)));
    }

    let shared = if rows.len() == 1 {
        Some(GpFit::at_theta(design, &rows[0], &settings.nugget, settings.scale_estimate)?)
    } else {
        None
    };

    let p = (0..settings.outer)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::derived_stream(settings.seed, "pf-outer", &[i as u64]);
            let params: Vec<InputParams> =
                inputs.iter().map(|v| v.draws[rng.random_range(0..v.draws.len())]).collect();
            let t = &rows[rng.random_range(0..rows.len())];
            let local;
            let fit = match &shared {
                Some(f) => f,
                None => {
                    local = GpFit::at_theta(design, t, &settings.nugget, settings.scale_estimate)?;
                    &local
                }
            };
            let predictor = Predictor::new(fit, design)?;
            let mut point = vec![0.0; inputs.len()];
            let mut total = 0.0;
            for _ in 0..settings.inner {
                for (x, pr) in point.iter_mut().zip(&params) {
                    *x = dists::sample(pr, &mut rng);
                }
                let pred = predictor.predict(&point, &[1.0])?;
                total += exceedance_probability(pred.z_hat, pred.s0, settings.z_crit);
            }
            Ok((total / settings.inner as f64).clamp(0.0, 1.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(FailurePosterior { p, z_crit: settings.z_crit, outer: settings.outer, inner: settings.inner })
}

/// Sample quantile with linear interpolation between order statistics
/// (`(n - 1) p` positioning).
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PfSummary {
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub mean_e6: f64,
    pub median_e6: f64,
    pub lower_e6: f64,
    pub upper_e6: f64,
    /// Target probability the summaries are compared with.
    pub target: f64,
    pub median_exceeds_target: bool,
    pub mean_exceeds_target: bool,
}

pub const DEFAULT_TARGET: f64 = 1e-6;

pub fn summarize(posterior: &FailurePosterior) -> Result<PfSummary> {
    summarize_with_target(&posterior.p, DEFAULT_TARGET)
}

pub fn summarize_with_target(p: &[f64], target: f64) -> Result<PfSummary> {
    if p.is_empty() {
        return Err(Error::InvalidParameter("empty exceedance posterior".into()));
    }
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    let median = quantile(&sorted, 0.5);
    let lower = quantile(&sorted, 0.025);
    let upper = quantile(&sorted, 0.975);
    Ok(PfSummary {
        mean,
        median,
        lower,
        upper,
        mean_e6: mean * 1e6,
        median_e6: median * 1e6,
        lower_e6: lower * 1e6,
        upper_e6: upper * 1e6,
        target,
        median_exceeds_target: median > target,
        mean_exceeds_target: mean > target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lhs_strata() {
        let m = [InputParams::normal(0.0, 1.0).unwrap()];
        let mut rng = seed::stream(3);
        let d = lhs_sample(2, &m, &mut rng).unwrap();
        let mut u: Vec<f64> = d.u.iter().cloned().collect();
        u.sort_by(f64::total_cmp);
        assert!(u[0] > 0.0 && u[0] < 0.5 && u[1] > 0.5 && u[1] < 1.0);
        let d = lhs_sample(7, &[m[0], InputParams::weibull(2.0, 3.0).unwrap()], &mut rng).unwrap();
        for c in 0..2 {
            let mut seen: Vec<usize> = d.u.column(c).iter().map(|v| (v * 7.0).floor() as usize).collect();
            seen.sort();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
        }
        assert!(d.s.column(1).iter().all(|v| *v > 0.0));
        assert!(lhs_sample(0, &m, &mut rng).is_err());
    }

    #[test]
    fn exceedance_tail() {
        assert_eq!(exceedance_probability(3.0, 0.2, 3.0), 0.5);
        let p = exceedance_probability(3.0 - 10.0 * 0.2, 0.2, 3.0);
        assert!(p > 0.0 && p < 1e-20);
        assert_abs_diff_eq!(p / 7.619_853_024_160_527e-24, 1.0, epsilon = 1e-10);
        assert_eq!(exceedance_probability(3.5, 0.0, 3.0), 1.0);
        assert_eq!(exceedance_probability(3.0, 0.0, 3.0), 0.0);
    }

    #[test]
    fn summary_examples() {
        let s = summarize_with_target(&[0.0, 0.0, 0.0, 4e-6], 1e-6).unwrap();
        assert_abs_diff_eq!(s.mean, 1e-6, epsilon = 1e-22);
        assert_eq!(s.median, 0.0);
        let s = summarize_with_target(&[0.3; 5], 1e-6).unwrap();
        assert_eq!((s.mean, s.median, s.lower, s.upper), (0.3, 0.3, 0.3, 0.3));
        assert!(summarize_with_target(&[], 1e-6).is_err());
    }
}
