//! Normal and Weibull input variables: densities, maximum-likelihood fits,
//! priors and unnormalized posteriors.
//!
//! Weibull variables use scale `alpha` and shape `beta` with
//! `f(x) = (beta/alpha) (x/alpha)^(beta-1) exp(-(x/alpha)^beta)`.
//! Normal variables are parameterized by mean and *variance*.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Normal,
    Weibull,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Normal => "Normal",
            Family::Weibull => "Weibull",
        }
    }

    /// Names of the two parameters, in state-vector order.
    pub fn parameter_names(self) -> [&'static str; 2] {
        match self {
            Family::Normal => ["mean", "variance"],
            Family::Weibull => ["scale", "shape"],
        }
    }
}

/// One uncertain simulator input and its laboratory observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputVariableSpec {
    name: String,
    family: Family,
    observations: Vec<f64>,
}

impl InputVariableSpec {
    pub fn new(name: impl Into<String>, family: Family, observations: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if observations.is_empty() {
            return Err(Error::Dataset(format!("variable {name} has no observations")));
        }
        if let Some(bad) = observations.iter().find(|x| !x.is_finite()) {
            return Err(Error::Dataset(format!("variable {name} has non-finite observation {bad}")));
        }
        if family == Family::Weibull {
            if let Some(bad) = observations.iter().find(|&&x| x <= 0.0) {
                return Err(Error::Domain { family: "Weibull", value: *bad });
            }
        }
        Ok(Self { name, family, observations })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }
}

/// Parameter vector of one input distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum InputParams {
    Normal { mean: f64, variance: f64 },
    Weibull { scale: f64, shape: f64 },
}

impl InputParams {
    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        let p = InputParams::Normal { mean, variance };
        p.validate()?;
        Ok(p)
    }

    pub fn weibull(scale: f64, shape: f64) -> Result<Self> {
        let p = InputParams::Weibull { scale, shape };
        p.validate()?;
        Ok(p)
    }

    pub fn family(&self) -> Family {
        match self {
            InputParams::Normal { .. } => Family::Normal,
            InputParams::Weibull { .. } => Family::Weibull,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InputParams::Normal { mean, variance } => {
                if !mean.is_finite() || !(variance > 0.0) || !variance.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "Normal requires finite mean and variance > 0, got ({mean}, {variance})"
                    )));
                }
            }
            InputParams::Weibull { scale, shape } => {
                if !(scale > 0.0) || !(shape > 0.0) || !scale.is_finite() || !shape.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "Weibull requires scale > 0 and shape > 0, got ({scale}, {shape})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 2] {
        match *self {
            InputParams::Normal { mean, variance } => [mean, variance],
            InputParams::Weibull { scale, shape } => [scale, shape],
        }
    }

    /// Inverse of [`to_array`](Self::to_array). Does not validate.
    pub fn from_array(family: Family, v: [f64; 2]) -> Self {
        match family {
            Family::Normal => InputParams::Normal { mean: v[0], variance: v[1] },
            Family::Weibull => InputParams::Weibull { scale: v[0], shape: v[1] },
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            InputParams::Normal { mean, .. } => mean,
            InputParams::Weibull { scale, shape } => scale * gamma(1.0 + 1.0 / shape),
        }
    }

    pub fn std_dev(&self) -> f64 {
        match *self {
            InputParams::Normal { variance, .. } => variance.sqrt(),
            InputParams::Weibull { scale, shape } => {
                let g1 = gamma(1.0 + 1.0 / shape);
                let g2 = gamma(1.0 + 2.0 / shape);
                scale * (g2 - g1 * g1).max(0.0).sqrt()
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            InputParams::Normal { mean, variance } => {
                0.5 * statrs::function::erf::erfc(-(x - mean) / (2.0 * variance).sqrt())
            }
            InputParams::Weibull { scale, shape } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-(x / scale).powf(shape)).exp_m1()
                }
            }
        }
    }

    /// Inverse CDF at probability `p` in (0, 1).
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            InputParams::Normal { mean, variance } => {
                mean + variance.sqrt() * standard_normal().inverse_cdf(p)
            }
            InputParams::Weibull { scale, shape } => scale * (-(-p).ln_1p()).powf(1.0 / shape),
        }
    }
}

fn standard_normal() -> Normal {
    Normal::standard()
}

pub fn log_density(x: f64, params: &InputParams) -> Result<f64> {
    params.validate()?;
    match *params {
        InputParams::Normal { mean, variance } => {
            if !x.is_finite() {
                return Err(Error::Domain { family: "Normal", value: x });
            }
            let d = x - mean;
            Ok(-0.5 * (LN_2PI + variance.ln()) - d * d / (2.0 * variance))
        }
        InputParams::Weibull { scale, shape } => {
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::Domain { family: "Weibull", value: x });
            }
            let r = x / scale;
            Ok(shape.ln() - scale.ln() + (shape - 1.0) * r.ln() - r.powf(shape))
        }
    }
}

pub fn log_likelihood(params: &InputParams, observations: &[f64]) -> Result<f64> {
    observations.iter().map(|&x| log_density(x, params)).sum()
}

/// Maximum-likelihood fit. Normal uses the closed-form moments (variance with
/// divisor `n`); Weibull profiles the shape on `[1e-3, 1e3]` and solves the
/// scale in closed form.
pub fn mle_fit(spec: &InputVariableSpec) -> Result<InputParams> {
    let obs = spec.observations();
    if obs.len() < 2 {
        return Err(Error::Degenerate(format!(
            "variable {} needs at least 2 observations for an MLE fit, has {}",
            spec.name(),
            obs.len()
        )));
    }
    match spec.family() {
        Family::Normal => {
            let n = obs.len() as f64;
            let mean = obs.iter().sum::<f64>() / n;
            let variance = obs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            if !(variance > 0.0) {
                return Err(Error::Degenerate(format!(
                    "variable {} has zero sample variance",
                    spec.name()
                )));
            }
            Ok(InputParams::Normal { mean, variance })
        }
        Family::Weibull => weibull_mle(spec.name(), obs),
    }
}

const SHAPE_LO: f64 = 1e-3;
const SHAPE_HI: f64 = 1e3;

fn weibull_mle(name: &str, obs: &[f64]) -> Result<InputParams> {
    let xmax = obs.iter().cloned().fold(f64::MIN, f64::max);
    let xmin = obs.iter().cloned().fold(f64::MAX, f64::min);
    if xmax == xmin {
        return Err(Error::Degenerate(format!(
            "all observations of Weibull variable {name} are equal; the shape MLE diverges"
        )));
    }
    let n = obs.len() as f64;
    // Work with y = x / max(x) <= 1 so y^shape never overflows.
    let ln_y: Vec<f64> = obs.iter().map(|&x| (x / xmax).ln()).collect();
    let mean_ln_y = ln_y.iter().sum::<f64>() / n;

    // Profile score h(shape) = 1/shape + mean(ln y) - S1/S0, strictly decreasing.
    let score = |shape: f64| -> (f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &ln_y {
            let w = (shape * l).exp();
            s0 += w;
            s1 += w * l;
            s2 += w * l * l;
        }
        let h = 1.0 / shape + mean_ln_y - s1 / s0;
        let dh = -1.0 / (shape * shape) - (s2 * s0 - s1 * s1) / (s0 * s0);
        (h, dh)
    };

    let (mut lo, mut hi) = (SHAPE_LO, SHAPE_HI);
    if score(hi).0 > 0.0 {
        return Err(Error::NonConvergence {
            what: format!("Weibull shape for {name} exceeds {SHAPE_HI}; data nearly degenerate"),
            iterations: 0,
        });
    }
    if score(lo).0 < 0.0 {
        return Err(Error::NonConvergence {
            what: format!("Weibull shape for {name} below {SHAPE_LO}"),
            iterations: 0,
        });
    }

    let mut shape = 1.0_f64.clamp(lo, hi);
    let max_iter = 500;
    let mut converged = false;
    for _ in 0..max_iter {
        let (h, dh) = score(shape);
        if h == 0.0 {
            converged = true;
            break;
        }
        if h > 0.0 {
            lo = shape;
        } else {
            hi = shape;
        }
        let newton = shape - h / dh;
        let next = if newton > lo && newton < hi && newton.is_finite() {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - shape).abs() <= 1e-15 * shape.max(1.0) || hi - lo <= 1e-15 * hi {
            shape = next;
            converged = true;
            break;
        }
        shape = next;
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: format!("Weibull shape root for {name}"),
            iterations: max_iter,
        });
    }
    let mean_pow = ln_y.iter().map(|&l| (shape * l).exp()).sum::<f64>() / n;
    let scale = xmax * mean_pow.powf(1.0 / shape);
    InputParams::weibull(scale, shape)
}

/// Gradient of the Weibull log-likelihood with respect to (scale, shape).
pub fn weibull_log_likelihood_gradient(scale: f64, shape: f64, obs: &[f64]) -> [f64; 2] {
    let n = obs.len() as f64;
    let (mut sum_pow, mut sum_log, mut sum_pow_log) = (0.0, 0.0, 0.0);
    for &x in obs {
        let l = (x / scale).ln();
        let p = (shape * l).exp();
        sum_pow += p;
        sum_log += l;
        sum_pow_log += p * l;
    }
    [(shape / scale) * (sum_pow - n), n / shape + sum_log - sum_pow_log]
}

/// Which square-root-Fisher construction a Jeffreys prior uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JeffreysForm {
    /// Square root of the determinant of the full 2x2 Fisher matrix.
    #[default]
    Joint,
    /// Product of the one-parameter Jeffreys priors.
    Independence,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    Flat,
    Jeffreys {
        #[serde(default)]
        form: JeffreysForm,
    },
    /// `mean | variance ~ N(m, variance/kappa)`, `variance ~ InvGamma(shape, rate)`.
    NormalInverseGamma { m: f64, kappa: f64, shape: f64, rate: f64 },
    /// Weibull with the shape fixed at `weibull_shape` and
    /// `scale^weibull_shape ~ InvGamma(shape, rate)`.
    InverseGammaScale { weibull_shape: f64, shape: f64, rate: f64 },
}

/// Prior families selectable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Flat,
    Jeffreys,
    Conjugate,
}

impl PriorKind {
    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Flat => "flat",
            PriorKind::Jeffreys => "jeffreys",
            PriorKind::Conjugate => "conjugate",
        }
    }
}

impl PriorSpec {
    pub fn jeffreys() -> Self {
        PriorSpec::Jeffreys { form: JeffreysForm::Joint }
    }

    /// Resolves a prior kind for a variable; conjugate priors get the
    /// data-centred default hyperparameters.
    pub fn for_kind(kind: PriorKind, form: JeffreysForm, spec: &InputVariableSpec) -> Result<Self> {
        Ok(match kind {
            PriorKind::Flat => PriorSpec::Flat,
            PriorKind::Jeffreys => PriorSpec::Jeffreys { form },
            PriorKind::Conjugate => PriorSpec::default_conjugate(spec)?,
        })
    }

    /// Weakly informative conjugate prior centred on the data.
    ///
    /// Normal: `(m, kappa, shape, rate) = (mean, 1, 2, sample variance)`.
    /// Weibull: shape fixed at its MLE `b0`, `InvGamma(2, mean(x^b0))` on `scale^b0`.
    pub fn default_conjugate(spec: &InputVariableSpec) -> Result<Self> {
        let obs = spec.observations();
        let n = obs.len() as f64;
        match spec.family() {
            Family::Normal => {
                if obs.len() < 2 {
                    return Err(Error::Degenerate(format!(
                        "variable {} needs 2 observations for a conjugate prior",
                        spec.name()
                    )));
                }
                let mean = obs.iter().sum::<f64>() / n;
                let var = obs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
                if !(var > 0.0) {
                    return Err(Error::Degenerate(format!(
                        "variable {} has zero sample variance",
                        spec.name()
                    )));
                }
                Ok(PriorSpec::NormalInverseGamma { m: mean, kappa: 1.0, shape: 2.0, rate: var })
            }
            Family::Weibull => {
                let b0 = match mle_fit(spec)? {
                    InputParams::Weibull { shape, .. } => shape,
                    InputParams::Normal { .. } => unreachable!(),
                };
                let rate = obs.iter().map(|x| x.powf(b0)).sum::<f64>() / n;
                Ok(PriorSpec::InverseGammaScale { weibull_shape: b0, shape: 2.0, rate })
            }
        }
    }

    pub fn kind(&self) -> PriorKind {
        match self {
            PriorSpec::Flat => PriorKind::Flat,
            PriorSpec::Jeffreys { .. } => PriorKind::Jeffreys,
            PriorSpec::NormalInverseGamma { .. } | PriorSpec::InverseGammaScale { .. } => {
                PriorKind::Conjugate
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            PriorSpec::Flat | PriorSpec::Jeffreys { .. } => true,
            PriorSpec::NormalInverseGamma { m, kappa, shape, rate } => {
                m.is_finite() && kappa > 0.0 && shape > 0.0 && rate > 0.0
            }
            PriorSpec::InverseGammaScale { weibull_shape, shape, rate } => {
                weibull_shape > 0.0 && shape > 0.0 && rate > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid prior hyperparameters {self:?}")))
        }
    }
}

fn ln_inverse_gamma(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

/// Log prior density, up to an additive constant for the improper priors.
pub fn log_prior(params: &InputParams, prior: &PriorSpec) -> Result<f64> {
    params.validate()?;
    prior.validate()?;
    match (*prior, *params) {
        (PriorSpec::Flat, _) => Ok(0.0),
        (PriorSpec::Jeffreys { form }, InputParams::Normal { variance, .. }) => Ok(match form {
            // sqrt(det I) for (mean, variance) is (2 variance^3)^(-1/2); drop the constant.
            JeffreysForm::Joint => -1.5 * variance.ln(),
            JeffreysForm::Independence => -variance.ln(),
        }),
        (PriorSpec::Jeffreys { form }, InputParams::Weibull { scale, shape }) => Ok(match form {
            // det I(scale, shape) = pi^2 / (6 scale^2); exact half log-determinant.
            JeffreysForm::Joint => (PI / 6f64.sqrt()).ln() - scale.ln(),
            JeffreysForm::Independence => -scale.ln() - shape.ln(),
        }),
        (PriorSpec::NormalInverseGamma { m, kappa, shape, rate }, InputParams::Normal { mean, variance }) => {
            let d = mean - m;
            Ok(0.5 * kappa.ln() - 0.5 * (LN_2PI + variance.ln()) - kappa * d * d / (2.0 * variance)
                + ln_inverse_gamma(variance, shape, rate))
        }
        (PriorSpec::InverseGammaScale { weibull_shape, shape: a, rate }, InputParams::Weibull { scale, shape }) => {
            if shape != weibull_shape {
                return Err(Error::InvalidParameter(format!(
                    "conjugate Weibull prior requires shape = {weibull_shape}, got {shape}"
                )));
            }
            // Density of the scale itself: InvGamma on scale^b0 times the Jacobian b0 scale^(b0-1).
            let lambda = scale.powf(weibull_shape);
            Ok(ln_inverse_gamma(lambda, a, rate) + weibull_shape.ln() + (weibull_shape - 1.0) * scale.ln())
        }
        (p, q) => Err(Error::InvalidParameter(format!(
            "prior {p:?} does not apply to a {} variable",
            q.family().name()
        ))),
    }
}

/// `log prior + log likelihood`, or `-inf` whenever the parameters are
/// outside the support (so a Metropolis step rejects them).
pub fn log_posterior_unnorm(params: &InputParams, spec: &InputVariableSpec, prior: &PriorSpec) -> f64 {
    if params.family() != spec.family() {
        return f64::NEG_INFINITY;
    }
    let lp = match log_prior(params, prior) {
        Ok(v) => v,
        Err(_) => return f64::NEG_INFINITY,
    };
    match log_likelihood(params, spec.observations()) {
        Ok(ll) if (lp + ll).is_finite() => lp + ll,
        _ => f64::NEG_INFINITY,
    }
}

/// Draws one variate.
pub fn sample<R: Rng + ?Sized>(params: &InputParams, rng: &mut R) -> f64 {
    match *params {
        InputParams::Normal { mean, variance } => {
            let z: f64 = StandardNormal.sample(rng);
            mean + variance.sqrt() * z
        }
        InputParams::Weibull { .. } => {
            let u: f64 = Open01.sample(rng);
            weibull_from_uniform(params, u)
        }
    }
}

/// Weibull inverse-CDF transform `scale * (-ln u)^(1/shape)`.
pub fn weibull_from_uniform(params: &InputParams, u: f64) -> f64 {
    match *params {
        InputParams::Weibull { scale, shape } => scale * (-u.ln()).powf(1.0 / shape),
        InputParams::Normal { .. } => panic!("weibull_from_uniform called with Normal parameters"),
    }
}

/// Maps a parameter vector from and to the sampler's state space. Conjugate
/// Weibull fits sample the scale only.
#[derive(Clone, Debug)]
pub struct PosteriorTarget<'a> {
    spec: &'a InputVariableSpec,
    prior: PriorSpec,
}

impl<'a> PosteriorTarget<'a> {
    pub fn new(spec: &'a InputVariableSpec, prior: PriorSpec) -> Result<Self> {
        prior.validate()?;
        let compatible = matches!(
            (spec.family(), prior),
            (_, PriorSpec::Flat)
                | (_, PriorSpec::Jeffreys { .. })
                | (Family::Normal, PriorSpec::NormalInverseGamma { .. })
                | (Family::Weibull, PriorSpec::InverseGammaScale { .. })
        );
        if !compatible {
            return Err(Error::InvalidParameter(format!(
                "prior {prior:?} does not apply to {} variable {}",
                spec.family().name(),
                spec.name()
            )));
        }
        Ok(Self { spec, prior })
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    fn fixed_shape(&self) -> Option<f64> {
        match self.prior {
            PriorSpec::InverseGammaScale { weibull_shape, .. } => Some(weibull_shape),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        if self.fixed_shape().is_some() {
            1
        } else {
            2
        }
    }

    pub fn params_from_state(&self, state: &[f64]) -> InputParams {
        match self.fixed_shape() {
            Some(shape) => InputParams::Weibull { scale: state[0], shape },
            None => InputParams::from_array(self.spec.family(), [state[0], state[1]]),
        }
    }

    pub fn state_from_params(&self, params: &InputParams) -> Vec<f64> {
        let a = params.to_array();
        if self.fixed_shape().is_some() {
            vec![a[0]]
        } else {
            a.to_vec()
        }
    }

    pub fn log_density(&self, state: &[f64]) -> f64 {
        log_posterior_unnorm(&self.params_from_state(state), self.spec, &self.prior)
    }
}

/// Per-observation Weibull Fisher information in (scale, shape) coordinates.
pub fn weibull_fisher_information(scale: f64, shape: f64) -> [[f64; 2]; 2] {
    let one_minus_gamma = 1.0 - EULER_GAMMA;
    let i_aa = (shape / scale).powi(2);
    let i_ab = -one_minus_gamma / scale;
    let i_bb = (PI * PI / 6.0 + one_minus_gamma * one_minus_gamma) / (shape * shape);
    [[i_aa, i_ab], [i_ab, i_bb]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn weib(scale: f64, shape: f64) -> InputParams {
        InputParams::weibull(scale, shape).unwrap()
    }

    #[test]
    fn density_examples() {
        assert_abs_diff_eq!(log_density(2.0, &weib(2.0, 1.0)).unwrap(), -(2f64.ln()) - 1.0, epsilon = 1e-12);
        let std = InputParams::normal(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(log_density(0.0, &std).unwrap(), -0.5 * (2.0 * PI).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(log_density(1.0, &weib(1.0, 2.0)).unwrap(), 2f64.ln() - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn density_errors() {
        assert!(matches!(log_density(-1.0, &weib(1.0, 1.0)), Err(Error::Domain { .. })));
        assert!(matches!(log_density(0.0, &weib(1.0, 1.0)), Err(Error::Domain { .. })));
        let bad = InputParams::Normal { mean: 0.0, variance: -1.0 };
        assert!(matches!(log_density(0.0, &bad), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn weibull_spec_rejects_nonpositive() {
        assert!(InputVariableSpec::new("X", Family::Weibull, vec![1.0, 0.0]).is_err());
        assert!(InputVariableSpec::new("X", Family::Normal, vec![]).is_err());
        assert!(InputVariableSpec::new("X", Family::Normal, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn normal_mle_closed_form() {
        let spec = InputVariableSpec::new("X", Family::Normal, vec![1.0, 2.0, 3.0]).unwrap();
        match mle_fit(&spec).unwrap() {
            InputParams::Normal { mean, variance } => {
                assert_eq!(mean, 2.0);
                assert_abs_diff_eq!(variance, 2.0 / 3.0, epsilon = 1e-15);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn weibull_mle_degenerate() {
        let spec = InputVariableSpec::new("X", Family::Weibull, vec![3.0, 3.0, 3.0]).unwrap();
        assert!(matches!(mle_fit(&spec), Err(Error::Degenerate(_))));
        let one = InputVariableSpec::new("X", Family::Weibull, vec![3.0]).unwrap();
        assert!(mle_fit(&one).is_err());
    }

    #[test]
    fn weibull_mle_stationary() {
        let obs = vec![2410.0, 2530.0, 2655.0, 2388.0];
        let spec = InputVariableSpec::new("X0004", Family::Weibull, obs.clone()).unwrap();
        let p = mle_fit(&spec).unwrap();
        let [a, b] = p.to_array();
        let g = weibull_log_likelihood_gradient(a, b, &obs);
        // Scale gradient in natural units; relative to 1/scale it is far smaller.
        assert!(g[0].abs() * a < 1e-8, "{g:?}");
        assert!(g[1].abs() < 1e-8, "{g:?}");
    }

    #[test]
    fn weibull_mle_large_sample() {
        let truth = weib(2.0, 3.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let obs: Vec<f64> = (0..10_000).map(|_| sample(&truth, &mut rng)).collect();
        let spec = InputVariableSpec::new("X", Family::Weibull, obs).unwrap();
        let [a, b] = mle_fit(&spec).unwrap().to_array();
        assert!((1.95..=2.05).contains(&a), "scale {a}");
        assert!((2.9..=3.1).contains(&b), "shape {b}");
    }

    #[test]
    fn prior_examples() {
        let n1 = InputParams::normal(0.3, 1.0).unwrap();
        assert_eq!(log_prior(&n1, &PriorSpec::Flat).unwrap(), 0.0);
        assert_abs_diff_eq!(log_prior(&n1, &PriorSpec::jeffreys()).unwrap(), 0.0, epsilon = 1e-15);
        let ne = InputParams::normal(0.3, std::f64::consts::E.powi(2)).unwrap();
        assert_abs_diff_eq!(log_prior(&ne, &PriorSpec::jeffreys()).unwrap(), -3.0, epsilon = 1e-12);
        let indep = PriorSpec::Jeffreys { form: JeffreysForm::Independence };
        assert_abs_diff_eq!(log_prior(&ne, &indep).unwrap(), -2.0, epsilon = 1e-12);
    }

    #[test]
    fn jeffreys_weibull_matches_analytic_fisher() {
        for &(a, b) in &[(1.0, 1.0), (2.0, 3.0), (2500.0, 18.0)] {
            let f = weibull_fisher_information(a, b);
            let det: f64 = f[0][0] * f[1][1] - f[0][1] * f[1][0];
            assert_abs_diff_eq!(
                log_prior(&weib(a, b), &PriorSpec::jeffreys()).unwrap(),
                0.5 * det.ln(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn conjugate_weibull_requires_fixed_shape() {
        let prior = PriorSpec::InverseGammaScale { weibull_shape: 3.0, shape: 2.0, rate: 1.0 };
        assert!(log_prior(&weib(1.0, 3.0), &prior).is_ok());
        assert!(log_prior(&weib(1.0, 2.5), &prior).is_err());
        assert!(log_prior(&InputParams::normal(0.0, 1.0).unwrap(), &prior).is_err());
    }

    #[test]
    fn posterior_sentinel_and_flat_identity() {
        let spec = InputVariableSpec::new("X", Family::Normal, vec![1.0, 2.5, 2.0]).unwrap();
        let bad = InputParams::Normal { mean: 1.0, variance: -1.0 };
        assert_eq!(log_posterior_unnorm(&bad, &spec, &PriorSpec::Flat), f64::NEG_INFINITY);
        let p = InputParams::normal(1.7, 0.8).unwrap();
        assert_eq!(
            log_posterior_unnorm(&p, &spec, &PriorSpec::Flat),
            log_likelihood(&p, spec.observations()).unwrap()
        );
    }

    #[test]
    fn weibull_inverse_cdf() {
        assert_abs_diff_eq!(weibull_from_uniform(&weib(1.0, 1.0), (-1f64).exp()), 1.0, epsilon = 1e-15);
        let p = weib(2.0, 3.0);
        for &q in &[0.01, 0.3, 0.5, 0.97] {
            assert_abs_diff_eq!(p.cdf(p.quantile(q)), q, epsilon = 1e-12);
        }
        let n = InputParams::normal(5.0, 4.0).unwrap();
        assert_abs_diff_eq!(n.quantile(0.5), 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n.cdf(n.quantile(0.9)), 0.9, epsilon = 1e-9);
    }

    #[test]
    fn conjugate_target_is_one_dimensional() {
        let spec = InputVariableSpec::new("X", Family::Weibull, vec![1.0, 1.4, 2.2, 0.7]).unwrap();
        let prior = PriorSpec::default_conjugate(&spec).unwrap();
        let t = PosteriorTarget::new(&spec, prior).unwrap();
        assert_eq!(t.dim(), 1);
        let p = t.params_from_state(&[1.3]);
        assert_eq!(t.state_from_params(&p), vec![1.3]);
        assert!(t.log_density(&[1.3]).is_finite());
        assert_eq!(t.log_density(&[-1.0]), f64::NEG_INFINITY);
    }
}
