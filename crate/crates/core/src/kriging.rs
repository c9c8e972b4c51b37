//! Universal kriging: best linear unbiased prediction and its mean squared
//! prediction error under a fitted [`GpFit`].

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpcore::{self, GpDesign, GpFit, NuggetPolicy, ScaleEstimate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrigingPrediction {
    pub z_hat: f64,
    /// Root mean squared prediction error.
    pub s0: f64,
    /// MSPE before clamping at zero.
    pub mspe_raw: f64,
    /// Euclidean distance to the nearest design point, in covariance
    /// coordinates.
    pub min_distance: f64,
}

/// Prediction engine bound to one fit. Construction is O(n K); each
/// prediction costs O(n^2) on top of the fit's factorization.
#[derive(Clone, Debug)]
pub struct Predictor<'a> {
    fit: &'a GpFit,
    rows: Vec<f64>,
    k: usize,
    inv_l2: Vec<f64>,
    alpha: f64,
    scaling: Option<&'a gpcore::ColumnScaling>,
    x_row_len: usize,
}

impl<'a> Predictor<'a> {
    pub fn new(fit: &'a GpFit, design: &'a GpDesign) -> Result<Self> {
        if fit.theta().len() != design.k() {
            return Err(Error::DimensionMismatch(format!(
                "fit has {} range parameters, design has {} inputs",
                fit.theta().len(),
                design.k()
            )));
        }
        if fit.factor().chol().nrows() != design.n() {
            return Err(Error::DimensionMismatch(format!(
                "fit was built on {} rows, design has {}",
                fit.factor().chol().nrows(),
                design.n()
            )));
        }
        let n = design.n();
        let k = design.k();
        let mut rows = Vec::with_capacity(n * k);
        for i in 0..n {
            rows.extend(design.inputs().row(i).iter());
        }
        Ok(Self {
            fit,
            rows,
            k,
            inv_l2: gpcore::inverse_squared_lengths(fit.theta()),
            alpha: fit.alpha_hat(),
            scaling: design.scaling(),
            x_row_len: design.q(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Predicts at a raw input point (the design's input scaling is applied).
    pub fn predict(&self, s0: &[f64], x0: &[f64]) -> Result<KrigingPrediction> {
        if s0.len() != self.k {
            return Err(Error::DimensionMismatch(format!("point has {} coordinates, expected {}", s0.len(), self.k)));
        }
        match self.scaling {
            Some(sc) => self.predict_scaled(&sc.apply(s0), x0),
            None => self.predict_scaled(s0, x0),
        }
    }

    /// Predicts at a point already in covariance coordinates.
    pub fn predict_scaled(&self, s0: &[f64], x0: &[f64]) -> Result<KrigingPrediction> {
        if s0.len() != self.k {
            return Err(Error::DimensionMismatch(format!("point has {} coordinates, expected {}", s0.len(), self.k)));
        }
        if x0.len() != self.x_row_len {
            return Err(Error::DimensionMismatch(format!(
                "mean regressors have {} entries, expected {}",
                x0.len(),
                self.x_row_len
            )));
        }
        let factor = self.fit.factor();
        let n = self.rows.len() / self.k.max(1);
        let mut w = Vec::with_capacity(n);
        let mut min_d2 = f64::INFINITY;
        for i in 0..n {
            let row = &self.rows[i * self.k..(i + 1) * self.k];
            w.push(gpcore::correlation(s0, row, &self.inv_l2));
            let d2: f64 = row.iter().zip(s0).map(|(a, b)| (a - b) * (a - b)).sum();
            min_d2 = min_d2.min(d2);
        }
        let resid = factor.resid_weights();
        let trend: f64 = x0.iter().zip(factor.beta().iter()).map(|(a, b)| a * b).sum();
        let z_hat = trend + w.iter().zip(resid.iter()).map(|(a, b)| a * b).sum::<f64>();

        gpcore::forward_substitute(factor.chol(), &mut w);
        let explained: f64 = w.iter().map(|v| v * v).sum();
        let wv = DVector::from_vec(w);
        let xt_vinv_phi = factor.whitened_x().transpose() * &wv;
        let mut u: Vec<f64> = x0.iter().zip(xt_vinv_phi.iter()).map(|(a, b)| a - b).collect();
        gpcore::solve_upper_transpose(factor.r_factor(), &mut u);
        let correction: f64 = u.iter().map(|v| v * v).sum();

        let mspe_raw = self.alpha * ((1.0 + factor.nugget()) - explained + correction);
        if mspe_raw < -1e-8 {
            log::warn!("negative MSPE {mspe_raw:e} clamped to zero");
        }
        if !z_hat.is_finite() || !mspe_raw.is_finite() {
            return Err(Error::Singular("kriging system produced a non-finite prediction".into()));
        }
        Ok(KrigingPrediction { z_hat, s0: mspe_raw.max(0.0).sqrt(), mspe_raw, min_distance: min_d2.sqrt() })
    }

    /// Constant-mean prediction at many raw points, in parallel.
    pub fn predict_many(&self, points: &[Vec<f64>]) -> Result<Vec<KrigingPrediction>> {
        points.par_iter().map(|p| self.predict(p, &[1.0])).collect()
    }
}

pub fn predict(fit: &GpFit, design: &GpDesign, s0: &[f64], x0: &[f64]) -> Result<KrigingPrediction> {
    Predictor::new(fit, design)?.predict(s0, x0)
}

/// Range parameters used by leave-one-out prediction.
#[derive(Clone, Debug, PartialEq)]
pub enum ThetaSource {
    Fixed(Vec<f64>),
    /// Posterior draws; one prediction per draw.
    Draws(Vec<Vec<f64>>),
}

impl ThetaSource {
    fn draws(&self) -> &[Vec<f64>] {
        match self {
            ThetaSource::Fixed(t) => std::slice::from_ref(t),
            ThetaSource::Draws(d) => d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooPrediction {
    pub index: usize,
    pub observed: f64,
    /// One prediction per theta draw (a single entry for fixed theta).
    pub predictions: Vec<KrigingPrediction>,
}

impl LooPrediction {
    pub fn mean_prediction(&self) -> f64 {
        self.predictions.iter().map(|p| p.z_hat).sum::<f64>() / self.predictions.len() as f64
    }
}

/// Predicts row `i` from the design with row `i` removed, at the given theta.
pub fn loo_predict_one(
    design: &GpDesign,
    i: usize,
    theta: &[f64],
    policy: &NuggetPolicy,
    scale: ScaleEstimate,
) -> Result<KrigingPrediction> {
    let reduced = design.without_row(i)?;
    let fit = GpFit::at_theta(&reduced, theta, policy, scale)?;
    let point: Vec<f64> = design.inputs().row(i).iter().cloned().collect();
    let x0: Vec<f64> = design.mean_design().row(i).iter().cloned().collect();
    Predictor::new(&fit, &reduced)?.predict_scaled(&point, &x0)
}

/// Leave-one-out predictions for every design row.
pub fn loo_predictions(
    design: &GpDesign,
    source: &ThetaSource,
    policy: &NuggetPolicy,
    scale: ScaleEstimate,
) -> Result<Vec<LooPrediction>> {
    let n = design.n();
    if n < 3 {
        return Err(Error::InvalidParameter(format!("leave-one-out needs n >= 3, got {n}")));
    }
    if source.draws().is_empty() {
        return Err(Error::InvalidParameter("no theta draws supplied".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let predictions = source
                .draws()
                .iter()
                .map(|theta| loo_predict_one(design, i, theta, policy, scale))
                .collect::<Result<Vec<_>>>()?;
            Ok(LooPrediction { index: i, observed: design.outputs()[i], predictions })
        })
        .collect()
}

/// Observed-vs-predicted summary of leave-one-out output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooDiagnostics {
    /// Pearson correlation of observed and (draw-averaged) predicted values.
    pub correlation: f64,
    /// Variance of the predictions over the variance of the residuals.
    pub signal_to_noise: f64,
    pub squared_error: f64,
}

pub fn loo_diagnostics(loo: &[LooPrediction]) -> LooDiagnostics {
    let n = loo.len() as f64;
    let obs: Vec<f64> = loo.iter().map(|l| l.observed).collect();
    let pred: Vec<f64> = loo.iter().map(|l| l.mean_prediction()).collect();
    let mo = obs.iter().sum::<f64>() / n;
    let mp = pred.iter().sum::<f64>() / n;
    let (mut sop, mut soo, mut spp) = (0.0, 0.0, 0.0);
    for (o, p) in obs.iter().zip(&pred) {
        sop += (o - mo) * (p - mp);
        soo += (o - mo) * (o - mo);
        spp += (p - mp) * (p - mp);
    }
    let resid: Vec<f64> = obs.iter().zip(&pred).map(|(o, p)| o - p).collect();
    let mr = resid.iter().sum::<f64>() / n;
    let srr: f64 = resid.iter().map(|r| (r - mr) * (r - mr)).sum();
    let squared_error = loo
        .iter()
        .map(|l| l.predictions.iter().map(|p| (l.observed - p.z_hat).powi(2)).sum::<f64>() / l.predictions.len() as f64)
        .sum();
    LooDiagnostics {
        correlation: if soo > 0.0 && spp > 0.0 { sop / (soo * spp).sqrt() } else { f64::NAN },
        signal_to_noise: if srr > 0.0 { spp / srr } else { f64::INFINITY },
        squared_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn fit_1d(s: &[f64], z: &[f64], theta: f64) -> (GpDesign, GpFit) {
        let d = GpDesign::constant_mean(DMatrix::from_column_slice(s.len(), 1, s), DVector::from_column_slice(z)).unwrap();
        let f = GpFit::at_theta(&d, &[theta], &NuggetPolicy::exact(), ScaleEstimate::Reml).unwrap();
        (d, f)
    }

    #[test]
    fn interpolates_design_points() {
        let (d, f) = fit_1d(&[0.0, 0.7, 1.5, 2.1], &[1.0, -0.3, 0.8, 2.0], 0.0);
        let p = Predictor::new(&f, &d).unwrap();
        for (s, z) in [(0.0, 1.0), (0.7, -0.3), (1.5, 0.8), (2.1, 2.0)] {
            let r = p.predict(&[s], &[1.0]).unwrap();
            assert_abs_diff_eq!(r.z_hat, z, epsilon = 1e-8);
            assert!(r.s0 < 1e-6);
            assert_eq!(r.min_distance, 0.0);
        }
    }

    #[test]
    fn far_points_revert_to_gls_mean() {
        let (d, f) = fit_1d(&[0.0, 0.7, 1.5, 2.1], &[1.0, -0.3, 0.8, 2.0], 0.0);
        let r = predict(&f, &d, &[1e3], &[1.0]).unwrap();
        assert_abs_diff_eq!(r.z_hat, f.beta_hat()[0], epsilon = 1e-12);
        // (1^T V^{-1} 1)^{-1} = 1 / R_11^2.
        let r11 = f.factor().r_factor()[(0, 0)];
        assert_abs_diff_eq!(r.mspe_raw, f.alpha_hat() * (1.0 + 1.0 / (r11 * r11)), epsilon = 1e-12);
    }

    #[test]
    fn constant_outputs_loo_exact() {
        let s = DMatrix::from_column_slice(5, 1, &[0.0, 0.4, 1.0, 1.3, 2.0]);
        let d = GpDesign::constant_mean(s, DVector::from_element(5, 2.5)).unwrap();
        let loo = loo_predictions(&d, &ThetaSource::Fixed(vec![0.0]), &NuggetPolicy::exact(), ScaleEstimate::Reml).unwrap();
        for l in &loo {
            assert_abs_diff_eq!(l.predictions[0].z_hat, 2.5, epsilon = 1e-12);
        }
        assert!(loo_diagnostics(&loo).squared_error < 1e-20);
    }

    #[test]
    fn dimension_checks() {
        let (d, f) = fit_1d(&[0.0, 0.7, 1.5], &[1.0, -0.3, 0.8], 0.0);
        assert!(predict(&f, &d, &[0.0, 1.0], &[1.0]).is_err());
        assert!(predict(&f, &d, &[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn diagnostics_of_perfect_predictions() {
        let loo: Vec<LooPrediction> = (0..4)
            .map(|i| LooPrediction {
                index: i,
                observed: i as f64,
                predictions: vec![KrigingPrediction { z_hat: i as f64, s0: 0.1, mspe_raw: 0.01, min_distance: 1.0 }],
            })
            .collect();
        let d = loo_diagnostics(&loo);
        assert_abs_diff_eq!(d.correlation, 1.0, epsilon = 1e-12);
        assert_eq!(d.squared_error, 0.0);
    }
}
