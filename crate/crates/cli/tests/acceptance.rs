//! Acceptance suite: one PASS/FAIL line per criterion, with wall-clock time
//! against its budget. Exits nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use relgp::{PipelineConfig, Setting, Stage};
use relgp_core::dists::{self, Family, InputVariableSpec, PosteriorTarget, PriorSpec};
use relgp_core::failure;
use relgp_core::gpcore::{self, FitOptions, GpDesign, GpFactor, GpFit, NuggetPolicy, ScaleEstimate, ThetaPrior};
use relgp_core::ingest::SMALL_P_TRUTH;
use relgp_core::kriging::Predictor;
use relgp_core::mcmc::{self, AmSettings, PosteriorChain};
use relgp_core::{seed, tuning};
use relgp_testkit as tk;

type Check = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn design_of(inst: &tk::Instance) -> GpDesign {
    GpDesign::new(inst.inputs.clone(), inst.mean_design.clone(), inst.outputs.clone()).unwrap()
}

fn separated_instance(rng: &mut ChaCha8Rng, n: usize, k: usize, q: usize) -> tk::Instance {
    loop {
        let inst = tk::random_instance(rng, n, k, q, 3.0);
        if tk::min_separation(&inst.inputs) > 0.15 {
            return inst;
        }
    }
}

fn random_theta(rng: &mut ChaCha8Rng, k: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(lo..hi)).collect()
}

fn interpolation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_z, mut worst_s): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let n = rng.random_range(2..=10);
        let k = rng.random_range(1..=3);
        let inst = separated_instance(&mut rng, n, k, 1);
        let design = design_of(&inst);
        let theta = random_theta(&mut rng, k, -1.2, -0.4);
        let fit = GpFit::at_theta(&design, &theta, &NuggetPolicy::exact(), ScaleEstimate::Reml).map_err(|e| e.to_string())?;
        ensure(fit.nugget() == 0.0, || format!("nugget {} on an exact fit", fit.nugget()))?;
        let p = Predictor::new(&fit, &design).map_err(|e| e.to_string())?;
        for i in 0..n {
            let r = p.predict(&tk::row(&inst.inputs, i), &[1.0]).map_err(|e| e.to_string())?;
            worst_z = worst_z.max((r.z_hat - inst.outputs[i]).abs());
            worst_s = worst_s.max(r.s0);
        }
    }
    ensure(worst_z < 1e-8 && worst_s < 1e-6, || format!("max |z_hat - z| = {worst_z:.2e}, max S0 = {worst_s:.2e}"))?;
    Ok(format!("max |z_hat - z| = {worst_z:.2e}, max S0 = {worst_s:.2e}"))
}

fn lagrange() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(3..=10);
        let k = rng.random_range(1..=3);
        let q = rng.random_range(1..=2);
        let inst = separated_instance(&mut rng, n, k, q);
        let design = design_of(&inst);
        let theta = random_theta(&mut rng, k, -1.2, -0.2);
        let fit = GpFit::at_theta(&design, &theta, &NuggetPolicy::default(), ScaleEstimate::Reml).map_err(|e| e.to_string())?;
        let v = tk::covariance(&inst.inputs, &theta, fit.nugget());
        let p = Predictor::new(&fit, &design).map_err(|e| e.to_string())?;
        let s0: Vec<f64> = (0..k).map(|_| rng.random_range(-0.5..3.5)).collect();
        let mut x0 = vec![1.0];
        x0.extend((1..q).map(|_| rng.random_range(-1.0..1.0)));
        let phi = tk::correlations(&inst.inputs, &s0, &theta);
        let (z_ref, mspe_ref) = tk::lagrange_predict(&v, &inst.mean_design, &inst.outputs, &phi, &x0, fit.nugget(), fit.alpha_hat());
        let r = p.predict(&s0, &x0).map_err(|e| e.to_string())?;
        worst = worst
            .max((r.z_hat - z_ref).abs() / z_ref.abs().max(1.0))
            .max((r.mspe_raw - mspe_ref).abs() / mspe_ref.abs().max(1.0));
    }
    ensure(worst < 1e-9, || format!("max discrepancy {worst:.2e}"))?;
    Ok(format!("max discrepancy {worst:.2e}"))
}

fn reml_contrast() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(5..=10);
        let k = rng.random_range(1..=3);
        let q = rng.random_range(1..=3);
        let inst = separated_instance(&mut rng, n, k, q);
        let design = design_of(&inst);
        let w = tk::complement_basis(&inst.mean_design);
        let direction = random_theta(&mut rng, k, -0.3, 0.3);
        let offsets: Vec<f64> = (0..20)
            .map(|g| {
                let base = -1.5 + 1.2 * g as f64 / 19.0;
                let theta: Vec<f64> = direction.iter().map(|d| base + d).collect();
                let f = GpFactor::new(&design, &theta, &NuggetPolicy::default()).unwrap();
                let v = tk::covariance(&inst.inputs, &theta, f.nugget());
                f.nll_reml(design.log_det_xtx()).unwrap() - tk::contrast_nll(&v, &w, &inst.outputs)
            })
            .collect();
        let spread = offsets.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - offsets.iter().cloned().fold(f64::INFINITY, f64::min);
        worst = worst.max(spread);
    }
    ensure(worst < 1e-8, || format!("max offset spread {worst:.2e}"))?;
    Ok(format!("max offset spread over the grid {worst:.2e}"))
}

fn nig_posterior_means(obs: &[f64], m: f64, kappa: f64, a: f64, b: f64) -> (f64, f64) {
    let n = obs.len() as f64;
    let xbar = obs.iter().sum::<f64>() / n;
    let ss: f64 = obs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let kn = kappa + n;
    let an = a + n / 2.0;
    let bn = b + 0.5 * ss + kappa * n * (xbar - m).powi(2) / (2.0 * kn);
    ((kappa * m + n * xbar) / kn, bn / (an - 1.0))
}

fn conjugate_recovery() -> Check {
    let (m, kappa, a, b) = (3.5, 2.0, 3.0, 1.0);
    let mut worst: f64 = 0.0;
    for rep in 0..10u64 {
        let mut data_rng = ChaCha8Rng::seed_from_u64(400 + rep);
        let obs: Vec<f64> = (0..12).map(|_| 4.0 + 0.7 * Distribution::<f64>::sample(&StandardNormal, &mut data_rng)).collect();
        let spec = InputVariableSpec::new("X0001", Family::Normal, obs.clone()).map_err(|e| e.to_string())?;
        let target = PosteriorTarget::new(&spec, PriorSpec::NormalInverseGamma { m, kappa, shape: a, rate: b }).map_err(|e| e.to_string())?;
        let init = target.state_from_params(&dists::mle_fit(&spec).map_err(|e| e.to_string())?);
        let settings = AmSettings { iterations: 100_000, ..AmSettings::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(500 + rep);
        let chain = mcmc::am_sample(|s: &[f64]| target.log_density(s), &init, None, &settings, &mut rng).map_err(|e| e.to_string())?;
        let chain = mcmc::remove_burn_in(&chain, 0.2).map_err(|e| e.to_string())?;
        let (mu_ref, var_ref) = nig_posterior_means(&obs, m, kappa, a, b);
        for (k, reference) in [(0, mu_ref), (1, var_ref)] {
            let col = chain.column(k);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let z = (mean - reference).abs() / mcmc::mc_standard_error(&col);
            worst = worst.max(z);
            ensure(z < 3.0, || format!("replication {rep}, coordinate {k}: {z:.2} MCSE from the analytic mean"))?;
        }
    }
    Ok(format!("worst deviation {worst:.2} MCSE over 10 replications"))
}

fn geweke() -> Check {
    let chains = 200u64;
    let mut rejected = 0u64;
    for c in 0..chains {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + c);
        let draws: Vec<Vec<f64>> = (0..10_000).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
        let chain = PosteriorChain::from_draws(draws, 1, 1.0).map_err(|e| e.to_string())?;
        if chain.geweke_z.as_ref().ok_or("no Geweke statistic")?[0].abs() > 1.96 {
            rejected += 1;
        }
    }
    let (lo, hi) = tk::binomial_band(chains, 0.05, 0.99);
    ensure((lo..=hi).contains(&rejected), || format!("{rejected}/200 rejections outside [{lo}, {hi}]"))?;
    Ok(format!("{rejected}/200 rejections, band [{lo}, {hi}]"))
}

fn theta_recovery() -> Check {
    let n = 60;
    let theta = 1.0;
    let inputs = DMatrix::from_fn(n, 1, |i, _| 1.5 * i as f64);
    let v = tk::covariance(&inputs, &[theta], 0.0);
    let mut covered = 0;
    for rep in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + rep);
        let z = tk::gp_draw(&v, 0.0, 1.0, &mut rng);
        let design = GpDesign::constant_mean(inputs.clone(), z).map_err(|e| e.to_string())?;
        let opts = FitOptions { seed: rep, ..FitOptions::default() };
        let fit = gpcore::fit_reml(&design, 0.0, &opts).map_err(|e| e.to_string())?;
        let hessian = fit.hessian.as_ref().ok_or("fit without Hessian")?;
        let se = gpcore::inverse_hessian_diagonal(hessian).map_err(|e| e.to_string())?[0].sqrt();
        if (fit.theta()[0] - theta).abs() <= 1.959963984540054 * se {
            covered += 1;
        }
    }
    ensure(covered >= 90, || format!("Wald interval covered theta in {covered}/100"))?;
    Ok(format!("Wald interval covered theta in {covered}/100"))
}

fn bayes_quadrature() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let prior = ThetaPrior { tau: -0.5, nu_sq: 0.3 };
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let n = rng.random_range(4..=7);
        let k = rng.random_range(1..=2);
        let inst = separated_instance(&mut rng, n, k, 1);
        let design = design_of(&inst);
        let theta = random_theta(&mut rng, k, -1.2, -0.2);
        let m = (n - 1) as f64;
        // The exact (beta, alpha) integral carries this theta-free constant.
        let log_const = -0.5 * m * (2.0 * std::f64::consts::PI).ln() + statrs::function::gamma::ln_gamma(m / 2.0) + 0.5 * m * 2f64.ln();
        let f = GpFactor::new(&design, &theta, &NuggetPolicy::default()).map_err(|e| e.to_string())?;
        let v = tk::covariance(&inst.inputs, &theta, f.nugget());
        let quad = tk::log_marginal_quadrature(&v, &inst.mean_design, &inst.outputs) + prior.log_density(&theta);
        let ours = -f.nll_bayes(&prior).map_err(|e| e.to_string())? + log_const;
        worst = worst.max((ours - quad).exp_m1().abs());
    }
    ensure(worst < 1e-6, || format!("max relative error {worst:.2e}"))?;
    Ok(format!("max relative error {worst:.2e}"))
}

fn write_config(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join("relgp.json");
    let text = format!(
        r#"{{ "dataset": "data/study.json", "output_dir": "out", "seed": {seed}, "pf": {{ "outer": 500, "inner": 500 }} }}"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn interval(cfg: &PipelineConfig) -> Result<(f64, f64), String> {
    let path = Stage::SimulatePf.dir(cfg).join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let get = |k: &str| v["summary"][k].as_f64().ok_or_else(|| format!("summary has no {k}"));
    Ok((get("lower")?, get("upper")?))
}

fn end_to_end() -> Check {
    let p_true = SMALL_P_TRUTH.0;
    let mut hits = BTreeMap::from([("A", 0), ("B", 0)]);
    let mut widths = Vec::new();
    for rep in 0..20u64 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = PipelineConfig::load(&write_config(tmp.path(), 8000 + rep)).map_err(|e| e.to_string())?;
        relgp::run_stage(&cfg, Stage::Synth).map_err(|e| e.to_string())?;
        for setting in [Setting::B, Setting::A] {
            cfg.setting = setting;
            relgp::run_all(&cfg).map_err(|e| format!("replication {rep}, setting {}: {e}", setting.name()))?;
            let (lo, hi) = interval(&cfg)?;
            if lo <= p_true && p_true <= hi {
                *hits.get_mut(setting.name()).unwrap() += 1;
            }
            widths.push((hi / lo.max(f64::MIN_POSITIVE)).log10());
        }
    }
    widths.sort_by(f64::total_cmp);
    let detail = format!(
        "p_true {p_true:.3e} covered A {}/20, B {}/20 (median interval spans {:.1} decades)",
        hits["A"],
        hits["B"],
        widths[widths.len() / 2]
    );
    ensure(hits.values().all(|&h| h >= 18), || detail.clone())?;
    Ok(detail)
}

fn tail_numerics() -> Check {
    let mut values = Vec::new();
    for (z_crit, s0) in [(3.0, 0.2), (2.5, 1e-3), (0.0, 1.0), (-4.0, 50.0)] {
        let p = failure::exceedance_probability(z_crit - 10.0 * s0, s0, z_crit);
        ensure(p > 0.0 && p <= 1e-20, || format!("z_crit {z_crit}, S0 {s0}: {p:e}"))?;
        values.push(p);
    }
    Ok(format!("P = {:.4e} at 10 S0 below the threshold", values[0]))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().and_then(|n| n.to_str()) != Some(relgp::artifacts::RUN_INFO) {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Check {
    let run = |dir: &Path| -> Result<Duration, String> {
        write_config(dir, 31);
        let start = Instant::now();
        for args in [&["synth"][..], &["all"][..]] {
            let out = Command::new(env!("CARGO_BIN_EXE_relgp")).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
            ensure(out.status.success(), || format!("relgp {args:?}: {}", String::from_utf8_lossy(&out.stderr)))?;
        }
        Ok(start.elapsed())
    };
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let (ta, tb) = (run(a.path())?, run(b.path())?);
    let files = files_under(a.path());
    ensure(files == files_under(b.path()), || "the two runs wrote different file sets".into())?;
    for f in &files {
        let same = std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.path().join(f)).unwrap();
        ensure(same, || format!("{} differs", f.display()))?;
    }
    Ok(format!("{} files identical (runs {:.1} s and {:.1} s)", files.len(), ta.as_secs_f64(), tb.as_secs_f64()))
}

fn drop_row(design: &GpDesign, i: usize) -> GpDesign {
    let n = design.n();
    let keep: Vec<usize> = (0..n).filter(|&r| r != i).collect();
    let inputs = DMatrix::from_fn(n - 1, design.k(), |r, c| design.inputs()[(keep[r], c)]);
    let z = DVector::from_fn(n - 1, |r, _| design.outputs()[keep[r]]);
    GpDesign::constant_mean(inputs, z).unwrap()
}

fn cv_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inst = tk::random_instance(&mut rng, 4, 1, 1, 3.0);
    let design = GpDesign::constant_mean(inst.inputs, inst.outputs).map_err(|e| e.to_string())?;
    let lambdas = [0.5, 4.0];
    let opts = FitOptions { restarts: 3, seed: 2024, ..FitOptions::default() };
    let report = tuning::cv_lambda(&design, &lambdas, &opts).map_err(|e| e.to_string())?;
    for (q, &lambda) in lambdas.iter().enumerate() {
        let mut score = 0.0;
        for i in 0..design.n() {
            let reduced = drop_row(&design, i);
            let fold_opts = FitOptions { seed: seed::derive_seed(2024, "cv-lambda", &[i as u64]), ..opts.clone() };
            let fit = gpcore::fit_reml(&reduced, lambda, &fold_opts).map_err(|e| e.to_string())?;
            let point: Vec<f64> = design.inputs().row(i).iter().cloned().collect();
            let p = Predictor::new(&fit, &reduced).and_then(|p| p.predict(&point, &[1.0])).map_err(|e| e.to_string())?;
            let loss = (design.outputs()[i] - p.z_hat).powi(2);
            ensure(report.fold_losses[q][i].to_bits() == loss.to_bits(), || format!("fold {i}, lambda {lambda}: {} vs {loss}", report.fold_losses[q][i]))?;
            score += loss;
        }
        ensure(report.scores[q].to_bits() == score.to_bits(), || format!("lambda {lambda}: score {} vs {score}", report.scores[q]))?;
    }
    Ok(format!("scores {:?} reproduced bit for bit", report.scores))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("kriging interpolation", 10, interpolation),
        ("Lagrange-system equivalence", 10, lagrange),
        ("REML-contrast equivalence", 30, reml_contrast),
        ("conjugate-posterior recovery", 120, conjugate_recovery),
        ("Geweke calibration", 60, geweke),
        ("range-parameter recovery", 300, theta_recovery),
        ("Bayesian marginalization", 60, bayes_quadrature),
        ("end-to-end fixture truth", 1800, end_to_end),
        ("tail numerics", 1, tail_numerics),
        ("determinism", 0, determinism),
        ("cross-validation equivalence", 10, cv_equivalence),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let over = *budget > 0 && secs > *budget as f64;
        let budget_text = if *budget > 0 { format!("{budget} s") } else { "two pipeline runs".into() };
        let (status, detail) = match &result {
            Ok(d) if !over => ("PASS", d.clone()),
            Ok(d) => ("FAIL", format!("{d}; over the time budget")),
            Err(e) => ("FAIL", e.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {:>2} {status} {name}: {detail} [{secs:.1} s, budget {budget_text}]", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
