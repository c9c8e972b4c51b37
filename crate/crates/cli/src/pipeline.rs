//! Stage execution. Each stage reads the dataset and upstream artifacts,
//! writes its own directory under the output root, and is skipped when its
//! key and outputs are unchanged.
//!
//! Seeds: stage `s` uses `derive_seed(master, s, indices)` where the indices
//! identify the unit of work (variable and prior for input fits, nothing for
//! single-run stages). Cross-validation folds derive further seeds from the
//! stage seed and the fold index.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use relgp_core::dists::{self, InputParams, InputVariableSpec, PosteriorTarget, PriorSpec};
use relgp_core::failure::{self, FailurePosterior, InputPosterior, PfSettings, ThetaDraws};
use relgp_core::gpcore::{self, FitOptions, GpDesign, GpFit, GpFitRecord, NuEstimate, ThetaPrior};
use relgp_core::ingest::{self, StudyDataset};
use relgp_core::kriging::{self, ThetaSource};
use relgp_core::mcmc::{self, format_f64};
use relgp_core::seed::derive_seed;
use relgp_core::tuning::{self, CvReport, PriorCvSettings};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::{self, sha256_hex, StageWriter};
use crate::config::{PipelineConfig, Setting};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Synth,
    FitInputs,
    TuneLambda,
    FitGp,
    TunePrior,
    SimulatePf,
    Report,
}

/// Stages run by `all`, in order.
pub const ALL: [Stage; 6] = [Stage::FitInputs, Stage::TuneLambda, Stage::FitGp, Stage::TunePrior, Stage::SimulatePf, Stage::Report];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::FitInputs => "fit-inputs",
            Stage::TuneLambda => "tune-lambda",
            Stage::FitGp => "fit-gp",
            Stage::TunePrior => "tune-prior",
            Stage::SimulatePf => "simulate-pf",
            Stage::Report => "report",
        }
    }

    /// Output directory of the stage under the artifact root.
    pub fn dir(self, cfg: &PipelineConfig) -> PathBuf {
        match self {
            Stage::Synth => cfg.synth.output_dir.clone(),
            Stage::SimulatePf | Stage::Report => cfg.output_dir.join(format!("{}-{}", self.name(), cfg.setting.name())),
            _ => cfg.output_dir.join(self.name()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

pub fn run_all(cfg: &PipelineConfig) -> Result<Vec<(Stage, Outcome)>, CliError> {
    ALL.iter().map(|&s| run_stage(cfg, s).map(|o| (s, o))).collect()
}

pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let ctx = Ctx::new(cfg, stage)?;
    let dir = stage.dir(cfg);
    if artifacts::is_up_to_date(&dir, &ctx.key) {
        log::info!("{}: up to date", stage.name());
        return Ok(Outcome::UpToDate);
    }
    log::info!("{}: running", stage.name());
    let mut w = StageWriter::create(&dir, stage.name(), &ctx.key, ctx.upstream.clone())?;
    match stage {
        Stage::Synth => synth(cfg, &mut w)?,
        Stage::FitInputs => fit_inputs(cfg, &ctx, &mut w)?,
        Stage::TuneLambda => tune_lambda(cfg, &ctx, &mut w)?,
        Stage::FitGp => fit_gp(cfg, &ctx, &mut w)?,
        Stage::TunePrior => tune_prior(cfg, &ctx, &mut w)?,
        Stage::SimulatePf => simulate_pf(cfg, &ctx, &mut w)?,
        Stage::Report => crate::report::write_report(cfg, &mut w)?,
    }
    w.finish()?;
    Ok(Outcome::Ran)
}

/// Per-run context: the stage key, upstream manifest digests and the
/// dataset, when the stage reads it.
struct Ctx {
    key: String,
    upstream: BTreeMap<String, String>,
    dataset: Option<StudyDataset>,
}

fn required(stage: Stage) -> &'static [Stage] {
    match stage {
        Stage::Synth | Stage::FitInputs | Stage::TuneLambda => &[],
        Stage::FitGp => &[Stage::TuneLambda],
        Stage::TunePrior => &[Stage::FitGp],
        Stage::SimulatePf => &[Stage::FitInputs, Stage::FitGp],
        Stage::Report => &[Stage::FitInputs, Stage::FitGp, Stage::SimulatePf],
    }
}

fn optional(stage: Stage, setting: Setting) -> &'static [Stage] {
    match (stage, setting) {
        (Stage::SimulatePf, Setting::B) => &[Stage::TunePrior],
        (Stage::Report, _) => &[Stage::TuneLambda, Stage::TunePrior],
        _ => &[],
    }
}

fn stage_params(cfg: &PipelineConfig, stage: Stage) -> serde_json::Value {
    let gp_shared = json!({
        "standardize": cfg.gp.standardize,
        "nugget": cfg.gp.nugget,
        "scale_estimate": cfg.gp.scale_estimate,
    });
    match stage {
        Stage::Synth => json!({ "seed": cfg.seed, "synth": cfg.synth }),
        Stage::FitInputs => json!({ "seed": cfg.seed, "inputs": cfg.inputs }),
        Stage::TuneLambda | Stage::FitGp => json!({ "seed": cfg.seed, "gp": cfg.gp }),
        Stage::TunePrior => json!({ "seed": cfg.seed, "prior": cfg.prior, "gp": gp_shared }),
        Stage::SimulatePf => json!({
            "seed": cfg.seed,
            "setting": cfg.setting,
            "pf": cfg.pf,
            "use_prior": cfg.inputs.use_prior,
            "gp": gp_shared,
        }),
        Stage::Report => json!({ "setting": cfg.setting, "target": cfg.pf.target }),
    }
}

/// Digest of the dataset manifest and the files it references.
fn dataset_digest(path: &Path) -> Result<String, CliError> {
    let manifest = ingest::read_manifest(path).map_err(|e| CliError::Config(e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut parts = vec![artifacts::sha256_file(path)?];
    for p in [&manifest.observations, &manifest.design, &manifest.outputs] {
        let full = if p.is_absolute() { p.clone() } else { base.join(p) };
        parts.push(artifacts::sha256_file(&full)?);
    }
    Ok(sha256_hex(parts.join("\n").as_bytes()))
}

impl Ctx {
    fn new(cfg: &PipelineConfig, stage: Stage) -> Result<Self, CliError> {
        let mut upstream = BTreeMap::new();
        for &dep in required(stage) {
            let m = artifacts::read_manifest(&dep.dir(cfg)).ok_or_else(|| CliError::MissingDependency {
                stage: stage.name().into(),
                dependency: dep.name().into(),
            })?;
            upstream.insert(dep.name().to_string(), m.digest());
        }
        for &dep in optional(stage, cfg.setting) {
            match artifacts::read_manifest(&dep.dir(cfg)) {
                Some(m) => {
                    upstream.insert(dep.name().to_string(), m.digest());
                }
                None if stage == Stage::SimulatePf => {
                    return Err(CliError::MissingDependency { stage: stage.name().into(), dependency: dep.name().into() })
                }
                None => {}
            }
        }
        let (dataset, data_digest) = match stage {
            Stage::Synth | Stage::Report => (None, String::new()),
            _ => {
                if !cfg.dataset.is_file() {
                    return Err(CliError::Config(format!("dataset manifest {} does not exist", cfg.dataset.display())));
                }
                let digest = dataset_digest(&cfg.dataset)?;
                let ds = ingest::load_dataset(&cfg.dataset).map_err(|e| CliError::Config(e.to_string()))?;
                (Some(ds), digest)
            }
        };
        let key_doc = json!({
            "stage": stage.name(),
            "params": stage_params(cfg, stage),
            "dataset": data_digest,
            "upstream": upstream,
        });
        let key = sha256_hex(&artifacts::to_json_bytes(&key_doc));
        Ok(Self { key, upstream, dataset })
    }

    fn dataset(&self) -> &StudyDataset {
        self.dataset.as_ref().expect("stage reads the dataset")
    }

    fn design(&self, cfg: &PipelineConfig) -> Result<GpDesign, CliError> {
        self.dataset().gp_design(cfg.gp.standardize).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn fmt_row(values: impl IntoIterator<Item = f64>) -> Vec<String> {
    values.into_iter().map(format_f64).collect()
}

fn fit_options(cfg: &PipelineConfig, seed: u64) -> FitOptions {
    FitOptions {
        restarts: cfg.gp.restarts,
        seed,
        nugget: cfg.gp.nugget,
        scale_estimate: cfg.gp.scale_estimate,
        ..FitOptions::default()
    }
}

fn synth(cfg: &PipelineConfig, w: &mut StageWriter) -> Result<(), CliError> {
    let seed = derive_seed(cfg.seed, "synth", &[]);
    let s = &cfg.synth;
    let ds = ingest::synth_study(seed, s.rows, s.inputs, &s.simulator).map_err(CliError::core("synth"))?;
    let manifest = ingest::write_dataset(w.dir(), &ds).map_err(|e| CliError::Config(e.to_string()))?;
    for name in ["observations.csv", "design.csv", "outputs.csv"] {
        w.register(name)?;
    }
    let manifest_name = manifest.file_name().and_then(|n| n.to_str()).unwrap_or("study.json").to_string();
    w.register(&manifest_name)?;
    let simulator = s.simulator.truncated(s.inputs).map_err(CliError::core("synth"))?;
    w.write_json("truth.json", &json!({ "simulator": simulator, "seed": seed }))
}

/// Posterior summary of one parameter column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub parameter: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn summarize_column(name: &str, values: &[f64]) -> ParamSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    ParamSummary {
        parameter: name.into(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        lower: failure::quantile(&sorted, 0.025),
        upper: failure::quantile(&sorted, 0.975),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputFitSummary {
    pub variable: String,
    pub family: dists::Family,
    pub prior: PriorSpec,
    pub chain_file: String,
    pub mle: InputParams,
    pub acceptance_rate: f64,
    pub geweke_z: Option<Vec<f64>>,
    pub rows: usize,
    pub burn_in_removed: usize,
    pub parameters: Vec<ParamSummary>,
}

pub fn chain_file(variable: &str, prior: dists::PriorKind) -> String {
    format!("{variable}_{}.csv", prior.name())
}

fn fit_inputs(cfg: &PipelineConfig, ctx: &Ctx, w: &mut StageWriter) -> Result<(), CliError> {
    let ds = ctx.dataset();
    let jobs: Vec<(usize, usize)> =
        (0..ds.k()).flat_map(|i| (0..cfg.inputs.priors.len()).map(move |j| (i, j))).collect();
    let results = jobs
        .par_iter()
        .map(|&(i, j)| fit_one_input(cfg, &ds.variables[i], i, j))
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut summaries = Vec::with_capacity(results.len());
    for (summary, rows) in results {
        let names = summary.family.parameter_names();
        w.write_csv(&summary.chain_file, &["iteration", names[0], names[1]], &rows)?;
        summaries.push(summary);
    }
    w.write_json("summary.json", &summaries)
}

fn fit_one_input(
    cfg: &PipelineConfig,
    spec: &InputVariableSpec,
    i: usize,
    j: usize,
) -> Result<(InputFitSummary, Vec<Vec<String>>), CliError> {
    let kind = cfg.inputs.priors[j];
    let context = format!("fit-inputs: {} with {} prior", spec.name(), kind.name());
    let prior = PriorSpec::for_kind(kind, cfg.inputs.jeffreys_form, spec).map_err(CliError::core(&context))?;
    let target = PosteriorTarget::new(spec, prior).map_err(CliError::core(&context))?;
    let mle = dists::mle_fit(spec).map_err(CliError::core(&context))?;
    let init = target.state_from_params(&mle);
    let mut rng = relgp_core::seed::derived_stream(cfg.seed, "fit-inputs", &[i as u64, j as u64]);
    let chain = mcmc::am_sample(|x: &[f64]| target.log_density(x), &init, None, &cfg.inputs.am, &mut rng)
        .map_err(CliError::core(&context))?;
    let chain = mcmc::remove_burn_in(&chain, cfg.inputs.burn_in).map_err(CliError::core(&context))?;
    let params: Vec<[f64; 2]> = chain.draws().iter().map(|s| target.params_from_state(s).to_array()).collect();
    let rows = params
        .iter()
        .enumerate()
        .map(|(r, p)| {
            let mut row = vec![chain.iteration_of(r).to_string()];
            row.extend(fmt_row(p.iter().cloned()));
            row
        })
        .collect();
    let names = spec.family().parameter_names();
    let parameters = (0..2)
        .map(|c| summarize_column(names[c], &params.iter().map(|p| p[c]).collect::<Vec<_>>()))
        .collect();
    let summary = InputFitSummary {
        variable: spec.name().into(),
        family: spec.family(),
        prior,
        chain_file: chain_file(spec.name(), kind),
        mle,
        acceptance_rate: chain.acceptance_rate,
        geweke_z: chain.geweke_z.clone(),
        rows: chain.rows(),
        burn_in_removed: chain.burn_in_removed,
        parameters,
    };
    Ok((summary, rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaChoice {
    pub lambda: f64,
    pub cross_validated: bool,
}

fn cv_rows(report: &CvReport) -> Vec<Vec<String>> {
    report
        .fold_losses
        .iter()
        .enumerate()
        .flat_map(|(q, losses)| {
            losses.iter().enumerate().map(move |(i, l)| vec![q.to_string(), i.to_string(), format_f64(*l)])
        })
        .collect()
}

fn tune_lambda(cfg: &PipelineConfig, ctx: &Ctx, w: &mut StageWriter) -> Result<(), CliError> {
    if cfg.gp.lambda_grid.is_empty() {
        return w.write_json("lambda.json", &LambdaChoice { lambda: cfg.gp.lambda, cross_validated: false });
    }
    let design = ctx.design(cfg)?;
    let opts = fit_options(cfg, derive_seed(cfg.seed, "tune-lambda", &[]));
    let report = tuning::cv_lambda(&design, &cfg.gp.lambda_grid, &opts).map_err(CliError::core("tune-lambda"))?;
    w.write_json("cv_report.json", &report)?;
    w.write_csv("fold_losses.csv", &["candidate", "fold", "loss"], &cv_rows(&report))?;
    let lambda = match report.winning_candidate() {
        tuning::CvCandidate::Lambda { lambda } => lambda,
        tuning::CvCandidate::Prior { .. } => unreachable!("penalty search yields penalties"),
    };
    w.write_json("lambda.json", &LambdaChoice { lambda, cross_validated: true })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpFitArtifact {
    pub fit: GpFitRecord,
    pub nu: Option<NuEstimate>,
    pub scaling: Option<gpcore::ColumnScaling>,
    pub variables: Vec<String>,
}

fn loo_rows(loo: &[kriging::LooPrediction]) -> Vec<Vec<String>> {
    loo.iter()
        .map(|l| {
            let s0 = l.predictions.iter().map(|p| p.s0).sum::<f64>() / l.predictions.len() as f64;
            vec![l.index.to_string(), format_f64(l.observed), format_f64(l.mean_prediction()), format_f64(s0)]
        })
        .collect()
}

const LOO_HEADER: [&str; 4] = ["index", "observed", "predicted", "s0"];

fn fit_gp(cfg: &PipelineConfig, ctx: &Ctx, w: &mut StageWriter) -> Result<(), CliError> {
    let choice: LambdaChoice = read_json(&Stage::TuneLambda.dir(cfg).join("lambda.json"))?;
    let design = ctx.design(cfg)?;
    let opts = fit_options(cfg, derive_seed(cfg.seed, "fit-gp", &[]));
    let fit = gpcore::fit_reml(&design, choice.lambda, &opts).map_err(CliError::core("fit-gp"))?;
    let nu = match fit.nu_estimate() {
        Ok(n) => Some(n),
        Err(e) => {
            log::warn!("fit-gp: no prior estimate from the Hessian: {e}");
            None
        }
    };
    let artifact = GpFitArtifact {
        fit: fit.record(),
        nu,
        scaling: design.scaling().cloned(),
        variables: ctx.dataset().variable_names(),
    };
    w.write_json("gp_fit.json", &artifact)?;
    let loo = kriging::loo_predictions(&design, &ThetaSource::Fixed(fit.theta().to_vec()), &cfg.gp.nugget, cfg.gp.scale_estimate)
        .map_err(CliError::core("fit-gp: leave-one-out"))?;
    w.write_csv("loo.csv", &LOO_HEADER, &loo_rows(&loo))?;
    w.write_json("loo_diagnostics.json", &kriging::loo_diagnostics(&loo))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorChoice {
    pub tau_hat: f64,
    pub nu_sq_hat: f64,
    pub chosen: ThetaPrior,
    pub cross_validated: bool,
}

pub fn read_gp_fit(cfg: &PipelineConfig) -> Result<GpFitArtifact, CliError> {
    read_json(&Stage::FitGp.dir(cfg).join("gp_fit.json"))
}

fn tune_prior(cfg: &PipelineConfig, ctx: &Ctx, w: &mut StageWriter) -> Result<(), CliError> {
    let gp = read_gp_fit(cfg)?;
    let nu = gp.nu.ok_or_else(|| CliError::Core {
        context: "tune-prior".into(),
        source: relgp_core::Error::Singular("fitted Hessian gave no prior estimate".into()),
    })?;
    let design = ctx.design(cfg)?;
    let stage_seed = derive_seed(cfg.seed, "tune-prior", &[]);
    let candidates: Vec<ThetaPrior> = if !cfg.prior.candidates.is_empty() {
        cfg.prior.candidates.clone()
    } else {
        cfg.prior.tau_grid.iter().map(|&tau| ThetaPrior { tau, nu_sq: nu.nu_sq_hat }).collect()
    };
    let cv_settings = PriorCvSettings {
        am: cfg.prior.cv_am.clone(),
        burn_in: cfg.prior.burn_in,
        master_seed: stage_seed,
        nugget: cfg.gp.nugget,
        scale_estimate: cfg.gp.scale_estimate,
    };
    let (chosen, cross_validated) = if candidates.is_empty() {
        (ThetaPrior { tau: nu.tau_hat, nu_sq: nu.nu_sq_hat }, false)
    } else {
        let report = tuning::cv_hyperparams(&design, &candidates, &cv_settings).map_err(CliError::core("tune-prior"))?;
        w.write_json("cv_report.json", &report)?;
        w.write_csv("fold_losses.csv", &["candidate", "fold", "loss"], &cv_rows(&report))?;
        (candidates[report.winner], true)
    };
    w.write_json(
        "prior.json",
        &PriorChoice { tau_hat: nu.tau_hat, nu_sq_hat: nu.nu_sq_hat, chosen, cross_validated },
    )?;

    let chain = tuning::sample_theta_posterior(
        &design,
        &chosen,
        &cfg.prior.theta_am,
        cfg.prior.burn_in,
        &cfg.gp.nugget,
        derive_seed(cfg.seed, "theta-chain", &[]),
    )
    .map_err(CliError::core("tune-prior: range-parameter chain"))?;
    let columns: Vec<String> = gp.variables.iter().map(|v| format!("theta_{v}")).collect();
    mcmc::write_chain_csv(&w.path("theta_chain.csv"), &chain, &columns).map_err(|e| CliError::Config(e.to_string()))?;
    w.register("theta_chain.csv")?;
    w.write_json(
        "theta_chain.json",
        &mcmc::ChainSidecar {
            columns,
            settings: cfg.prior.theta_am.clone(),
            acceptance_rate: chain.acceptance_rate,
            geweke_z: chain.geweke_z.clone(),
            burn_in_fraction: chain.burn_in_fraction,
            burn_in_removed: chain.burn_in_removed,
            thinning: chain.thinning(),
        },
    )?;

    // Leave-one-out predictions with a fresh chain per fold.
    let loo_settings = PriorCvSettings { master_seed: derive_seed(cfg.seed, "loo-bayes", &[]), ..cv_settings };
    let loo = (0..design.n())
        .into_par_iter()
        .map(|i| {
            let fold_chain = tuning::prior_fold_chain(&design, &chosen, i, &loo_settings)?;
            let predictions = fold_chain
                .draws()
                .iter()
                .map(|t| kriging::loo_predict_one(&design, i, t, &cfg.gp.nugget, cfg.gp.scale_estimate))
                .collect::<relgp_core::Result<Vec<_>>>()?;
            Ok(kriging::LooPrediction { index: i, observed: design.outputs()[i], predictions })
        })
        .collect::<relgp_core::Result<Vec<_>>>()
        .map_err(CliError::core("tune-prior: leave-one-out"))?;
    w.write_csv("loo.csv", &LOO_HEADER, &loo_rows(&loo))?;
    w.write_json("loo_diagnostics.json", &kriging::loo_diagnostics(&loo))
}

/// Loads the input posteriors used by the simulation, in design order.
pub fn read_input_posteriors(cfg: &PipelineConfig, names: &[String]) -> Result<Vec<InputPosterior>, CliError> {
    let dir = Stage::FitInputs.dir(cfg);
    let summaries: Vec<InputFitSummary> = read_json(&dir.join("summary.json"))?;
    names
        .iter()
        .map(|name| {
            let s = summaries
                .iter()
                .find(|s| &s.variable == name && s.prior.kind() == cfg.inputs.use_prior)
                .ok_or_else(|| {
                    CliError::Config(format!("no {} posterior for {name} in {}", cfg.inputs.use_prior.name(), dir.display()))
                })?;
            let (_, rows) = mcmc::read_chain_csv(&dir.join(&s.chain_file)).map_err(|e| CliError::Config(e.to_string()))?;
            let draws = rows.iter().map(|r| InputParams::from_array(s.family, [r[0], r[1]])).collect();
            InputPosterior::new(name.clone(), s.family, draws).map_err(CliError::core("simulate-pf"))
        })
        .collect()
}

pub fn read_theta_chain(cfg: &PipelineConfig) -> Result<Vec<Vec<f64>>, CliError> {
    let path = Stage::TunePrior.dir(cfg).join("theta_chain.csv");
    let (_, rows) = mcmc::read_chain_csv(&path).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(rows)
}

fn simulate_pf(cfg: &PipelineConfig, ctx: &Ctx, w: &mut StageWriter) -> Result<(), CliError> {
    let gp = read_gp_fit(cfg)?;
    let design = ctx.design(cfg)?;
    let inputs = read_input_posteriors(cfg, &ctx.dataset().variable_names())?;
    let theta = match cfg.setting {
        Setting::A => ThetaDraws::Fixed(gp.fit.theta.clone()),
        Setting::B => ThetaDraws::Chain(read_theta_chain(cfg)?),
    };
    let settings = PfSettings {
        outer: cfg.pf.outer,
        inner: cfg.pf.inner,
        z_crit: cfg.pf.z_crit,
        seed: derive_seed(cfg.seed, "simulate-pf", &[]),
        nugget: cfg.gp.nugget,
        scale_estimate: cfg.gp.scale_estimate,
    };
    let post = failure::simulate_pf(&inputs, &theta, &design, &settings).map_err(CliError::core("simulate-pf"))?;
    write_posterior(cfg, w, &post)
}

fn write_posterior(cfg: &PipelineConfig, w: &mut StageWriter, post: &FailurePosterior) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = post.p.iter().enumerate().map(|(i, p)| vec![i.to_string(), format_f64(*p)]).collect();
    w.write_csv("pf.csv", &["draw", "p"], &rows)?;
    let summary = failure::summarize_with_target(&post.p, cfg.pf.target).map_err(CliError::core("simulate-pf"))?;
    w.write_json(
        "summary.json",
        &json!({
            "setting": cfg.setting,
            "z_crit": post.z_crit,
            "outer": post.outer,
            "inner": post.inner,
            "summary": summary,
        }),
    )
}

/// Reads the exceedance draws written by `simulate-pf`.
pub fn read_pf(cfg: &PipelineConfig) -> Result<Vec<f64>, CliError> {
    let path = Stage::SimulatePf.dir(cfg).join("pf.csv");
    let mut r = csv::Reader::from_path(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            rec.get(1)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| CliError::Config(format!("{}: malformed row", path.display())))
        })
        .collect()
}

/// Rebuilds the fitted surrogate from the fit-gp artifact.
pub fn rebuild_fit(cfg: &PipelineConfig, design: &GpDesign) -> Result<GpFit, CliError> {
    let gp = read_gp_fit(cfg)?;
    GpFit::from_record(design, &gp.fit, &cfg.gp.nugget).map_err(CliError::core("rebuild surrogate"))
}
