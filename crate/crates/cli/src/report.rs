//! Plot-ready exports: input posterior intervals, cross-validation curves,
//! observed-vs-predicted tables, range-parameter comparison and the
//! exceedance histogram.

use std::path::Path;

use relgp_core::failure;
use relgp_core::gpcore;
use relgp_core::mcmc::format_f64;
use relgp_core::tuning::{CvCandidate, CvReport};
use serde_json::json;

use crate::artifacts::StageWriter;
use crate::config::PipelineConfig;
use crate::pipeline::{self, InputFitSummary, Stage};
use crate::CliError;

const Z_975: f64 = 1.959_963_984_540_054;

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn input_interval_rows(summaries: &[InputFitSummary]) -> Vec<Vec<String>> {
    summaries
        .iter()
        .flat_map(|s| {
            s.parameters.iter().map(move |p| {
                vec![
                    s.variable.clone(),
                    s.family.name().to_string(),
                    s.prior.kind().name().to_string(),
                    p.parameter.clone(),
                    format_f64(p.mean),
                    format_f64(p.lower),
                    format_f64(p.upper),
                ]
            })
        })
        .collect()
}

/// Equal-width histogram of `values` over `[min, max]`.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![(lo, hi, values.len())];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts.into_iter().enumerate().map(|(b, c)| (lo + b as f64 * width, lo + (b + 1) as f64 * width, c)).collect()
}

fn copy_loo(w: &mut StageWriter, from: &Path, to: &str) -> Result<Option<serde_json::Value>, CliError> {
    let bytes = std::fs::read(from.join("loo.csv")).map_err(|e| CliError::io(from, e))?;
    w.write(to, &bytes)?;
    read_json(&from.join("loo_diagnostics.json")).map(Some)
}

fn cv_curve(w: &mut StageWriter, path: &Path, name: &str) -> Result<(), CliError> {
    if !path.is_file() {
        return Ok(());
    }
    let report: CvReport = read_json(path)?;
    let rows: Vec<Vec<String>> = report
        .candidates
        .iter()
        .zip(&report.scores)
        .map(|(c, s)| match c {
            CvCandidate::Lambda { lambda } => vec![format_f64(*lambda), format_f64(*s)],
            CvCandidate::Prior { tau, nu_sq } => vec![format_f64(*tau), format_f64(*nu_sq), format_f64(*s)],
        })
        .collect();
    let header: &[&str] = match report.candidates.first() {
        Some(CvCandidate::Prior { .. }) => &["tau", "nu_sq", "score"],
        _ => &["lambda", "score"],
    };
    w.write_csv(name, header, &rows)
}

pub fn write_report(cfg: &PipelineConfig, w: &mut StageWriter) -> Result<(), CliError> {
    let inputs: Vec<InputFitSummary> = read_json(&Stage::FitInputs.dir(cfg).join("summary.json"))?;
    w.write_csv(
        "input_posteriors.csv",
        &["variable", "family", "prior", "parameter", "mean", "lower", "upper"],
        &input_interval_rows(&inputs),
    )?;

    cv_curve(w, &Stage::TuneLambda.dir(cfg).join("cv_report.json"), "cv_lambda.csv")?;
    cv_curve(w, &Stage::TunePrior.dir(cfg).join("cv_report.json"), "cv_prior.csv")?;

    let mut diagnostics = serde_json::Map::new();
    if let Some(d) = copy_loo(w, &Stage::FitGp.dir(cfg), "observed_vs_expected_reml.csv")? {
        diagnostics.insert("reml".into(), d);
    }
    let prior_dir = Stage::TunePrior.dir(cfg);
    if prior_dir.join("loo.csv").is_file() {
        if let Some(d) = copy_loo(w, &prior_dir, "observed_vs_expected_bayes.csv")? {
            diagnostics.insert("bayes".into(), d);
        }
    }
    w.write_json("diagnostics.json", &diagnostics)?;

    let gp = pipeline::read_gp_fit(cfg)?;
    let se: Vec<f64> = match &gp.fit.hessian {
        Some(rows) => {
            let k = rows.len();
            let h = square_matrix(rows, k);
            gpcore::inverse_hessian_diagonal(&h)
                .map_err(CliError::core("report"))?
                .into_iter()
                .map(|v| if v > 0.0 { v.sqrt() } else { f64::NAN })
                .collect()
        }
        None => vec![f64::NAN; gp.fit.theta.len()],
    };
    let bayes: Option<Vec<pipeline::ParamSummary>> = if prior_dir.join("theta_chain.csv").is_file() {
        let rows = pipeline::read_theta_chain(cfg)?;
        Some(
            (0..gp.fit.theta.len())
                .map(|k| pipeline::summarize_column(&gp.variables[k], &rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
                .collect(),
        )
    } else {
        None
    };
    let rows: Vec<Vec<String>> = (0..gp.fit.theta.len())
        .map(|k| {
            let t = gp.fit.theta[k];
            let mut row = vec![gp.variables[k].clone()];
            row.extend([t, t - Z_975 * se[k], t + Z_975 * se[k]].map(format_f64));
            match &bayes {
                Some(b) => row.extend([b[k].mean, b[k].lower, b[k].upper].map(format_f64)),
                None => row.extend(["", "", ""].map(String::from)),
            }
            row
        })
        .collect();
    w.write_csv(
        "theta_comparison.csv",
        &["variable", "reml", "reml_lower", "reml_upper", "bayes_mean", "bayes_lower", "bayes_upper"],
        &rows,
    )?;

    let p = pipeline::read_pf(cfg)?;
    let summary = failure::summarize_with_target(&p, cfg.pf.target).map_err(CliError::core("report"))?;
    let scaled: Vec<f64> = p.iter().map(|v| v * 1e6).collect();
    let hist: Vec<Vec<String>> = histogram(&scaled, 40)
        .into_iter()
        .map(|(a, b, c)| vec![format_f64(a), format_f64(b), c.to_string()])
        .collect();
    w.write_csv("pf_histogram.csv", &["lower_e6", "upper_e6", "count"], &hist)?;
    w.write_json("pf_summary.json", &json!({ "setting": cfg.setting, "summary": summary }))
}

fn square_matrix(rows: &[Vec<f64>], k: usize) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(k, k, |i, j| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_everything() {
        let v = [0.0, 0.1, 0.5, 0.9, 1.0];
        let h = histogram(&v, 4);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 5);
        assert_eq!(h[3].2, 2);
        assert_eq!(histogram(&[2.0, 2.0], 4), vec![(2.0, 2.0, 2)]);
    }
}
