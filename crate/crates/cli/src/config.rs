use std::path::{Path, PathBuf};

use relgp_core::dists::{JeffreysForm, PriorKind};
use relgp_core::gpcore::{NuggetPolicy, ScaleEstimate, ThetaPrior};
use relgp_core::ingest::SynthConfig;
use relgp_core::mcmc::AmSettings;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Setting {
    /// Fixed REML range parameters.
    #[value(name = "A", alias = "a")]
    A,
    /// Range parameters drawn from their posterior.
    #[default]
    #[value(name = "B", alias = "b")]
    B,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::A => "A",
            Setting::B => "B",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputStage {
    /// Priors to fit for every variable (all appear in the report).
    pub priors: Vec<PriorKind>,
    /// Prior whose posteriors feed the exceedance simulation.
    pub use_prior: PriorKind,
    pub jeffreys_form: JeffreysForm,
    pub am: AmSettings,
    pub burn_in: f64,
}

impl Default for InputStage {
    fn default() -> Self {
        Self {
            priors: vec![PriorKind::Jeffreys],
            use_prior: PriorKind::Jeffreys,
            jeffreys_form: JeffreysForm::Joint,
            am: AmSettings::default(),
            burn_in: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpStage {
    pub standardize: bool,
    pub restarts: usize,
    /// Penalty used when `lambda_grid` is empty.
    pub lambda: f64,
    /// Cross-validated penalty candidates; empty skips the search.
    pub lambda_grid: Vec<f64>,
    pub nugget: NuggetPolicy,
    pub scale_estimate: ScaleEstimate,
}

impl Default for GpStage {
    fn default() -> Self {
        Self {
            standardize: true,
            restarts: 8,
            lambda: 2.0,
            lambda_grid: Vec::new(),
            nugget: NuggetPolicy::default(),
            scale_estimate: ScaleEstimate::Reml,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorStage {
    /// Explicit `(tau, nu_sq)` candidates.
    pub candidates: Vec<ThetaPrior>,
    /// `tau` values paired with the Hessian-based `nu_sq`; used when
    /// `candidates` is empty. With both empty the Hessian-based pair is used
    /// without cross-validation.
    pub tau_grid: Vec<f64>,
    /// Sampler settings inside cross-validation.
    pub cv_am: AmSettings,
    /// Sampler settings of the final range-parameter chain.
    pub theta_am: AmSettings,
    pub burn_in: f64,
}

impl Default for PriorStage {
    fn default() -> Self {
        Self {
            candidates: Vec::new(),
            tau_grid: Vec::new(),
            cv_am: AmSettings { iterations: 20_000, non_adaptive: 2_000, ..AmSettings::default() },
            theta_am: AmSettings::default(),
            burn_in: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PfStage {
    pub z_crit: f64,
    pub outer: usize,
    pub inner: usize,
    /// Target probability the summaries are compared against.
    pub target: f64,
}

impl Default for PfStage {
    fn default() -> Self {
        Self { z_crit: 3.0, outer: 2000, inner: 1000, target: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthStage {
    /// Directory the fixture is written to (the dataset manifest should
    /// point into it).
    pub output_dir: PathBuf,
    pub rows: usize,
    pub inputs: usize,
    pub simulator: SynthConfig,
}

impl Default for SynthStage {
    fn default() -> Self {
        Self { output_dir: PathBuf::from("data"), rows: 25, inputs: 15, simulator: SynthConfig::small_p() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Study manifest.
    pub dataset: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub setting: Setting,
    #[serde(default)]
    pub inputs: InputStage,
    #[serde(default)]
    pub gp: GpStage,
    #[serde(default)]
    pub prior: PriorStage,
    #[serde(default)]
    pub pf: PfStage,
    #[serde(default)]
    pub synth: SynthStage,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("artifacts")
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for p in [&mut cfg.dataset, &mut cfg.output_dir, &mut cfg.synth.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.inputs.priors.is_empty() {
            return bad("inputs.priors is empty".into());
        }
        if !self.inputs.priors.contains(&self.inputs.use_prior) {
            return bad(format!("inputs.use_prior {} is not among inputs.priors", self.inputs.use_prior.name()));
        }
        for (what, am) in [("inputs.am", &self.inputs.am), ("prior.cv_am", &self.prior.cv_am), ("prior.theta_am", &self.prior.theta_am)] {
            am.validate().map_err(|e| CliError::Config(format!("{what}: {e}")))?;
        }
        for (what, b) in [("inputs.burn_in", self.inputs.burn_in), ("prior.burn_in", self.prior.burn_in)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{what} must lie in [0, 1), got {b}"));
            }
        }
        if self.gp.restarts == 0 {
            return bad("gp.restarts must be >= 1".into());
        }
        if !(self.gp.lambda >= 0.0) || self.gp.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return bad("penalties must be >= 0".into());
        }
        if self.prior.candidates.iter().any(|c| !(c.nu_sq > 0.0) || !c.tau.is_finite()) {
            return bad("prior candidates need finite tau and nu_sq > 0".into());
        }
        if self.pf.outer == 0 || self.pf.inner == 0 {
            return bad("pf.outer and pf.inner must be >= 1".into());
        }
        if !self.pf.z_crit.is_finite() {
            return bad("pf.z_crit must be finite".into());
        }
        Ok(())
    }
}
