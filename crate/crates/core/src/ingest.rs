//! Study datasets on disk, and the synthetic simulator and study generator
//! used as a fixture with known ground truth.
//!
//! File layout: an observations CSV (`variable,value`), a design CSV with
//! one column per variable in manifest order, an outputs CSV with the single
//! column `peak_accel_g`, and a JSON manifest tying them together. Manifest
//! paths are relative to the manifest's directory.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::dists::{self, Family, InputParams, InputVariableSpec};
use crate::error::{Error, Result};
use crate::failure;
use crate::gpcore::GpDesign;
use crate::mcmc::format_f64;
use crate::seed;

pub const OUTPUT_COLUMN: &str = "peak_accel_g";
pub const DEFAULT_RESCALE: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableDecl {
    pub name: String,
    pub family: Family,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub observations: PathBuf,
    pub design: PathBuf,
    pub outputs: PathBuf,
    #[serde(default = "default_rescale")]
    pub rescale_factor: f64,
    pub variables: Vec<VariableDecl>,
}

fn default_rescale() -> f64 {
    DEFAULT_RESCALE
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyDataset {
    pub variables: Vec<InputVariableSpec>,
    /// n x K simulator inputs.
    pub inputs: DMatrix<f64>,
    /// Outputs in raw units.
    pub outputs_raw: Vec<f64>,
    pub rescale_factor: f64,
}

impl StudyDataset {
    pub fn new(
        variables: Vec<InputVariableSpec>,
        inputs: DMatrix<f64>,
        outputs_raw: Vec<f64>,
        rescale_factor: f64,
    ) -> Result<Self> {
        if inputs.nrows() != outputs_raw.len() {
            return Err(Error::Dataset(format!(
                "design has {} rows but there are {} outputs",
                inputs.nrows(),
                outputs_raw.len()
            )));
        }
        if inputs.ncols() != variables.len() {
            return Err(Error::Dataset(format!(
                "design has {} columns but {} variables are declared",
                inputs.ncols(),
                variables.len()
            )));
        }
        if !(rescale_factor > 0.0) || !rescale_factor.is_finite() {
            return Err(Error::Dataset(format!("rescale factor must be > 0, got {rescale_factor}")));
        }
        if inputs.iter().chain(outputs_raw.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Dataset("design or outputs contain non-finite values".into()));
        }
        Ok(Self { variables, inputs, outputs_raw, rescale_factor })
    }

    pub fn n(&self) -> usize {
        self.outputs_raw.len()
    }

    pub fn k(&self) -> usize {
        self.variables.len()
    }

    pub fn outputs(&self) -> Vec<f64> {
        self.outputs_raw.iter().map(|z| z / self.rescale_factor).collect()
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name().to_string()).collect()
    }

    /// Observation count per variable.
    pub fn observation_counts(&self) -> Vec<(String, usize)> {
        self.variables.iter().map(|v| (v.name().to_string(), v.observations().len())).collect()
    }

    /// Constant-mean surrogate design on the rescaled outputs.
    pub fn gp_design(&self, standardize: bool) -> Result<GpDesign> {
        let d = GpDesign::constant_mean(self.inputs.clone(), DVector::from_vec(self.outputs()))?;
        Ok(if standardize { d.with_standardized_inputs() } else { d })
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv { path: path.display().to_string(), source }
}

fn parse_number(path: &Path, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Dataset(format!("{}: record {line}: '{s}' is not a number", path.display())))?;
    if !v.is_finite() {
        return Err(Error::Dataset(format!("{}: record {line}: non-finite value '{s}'", path.display())));
    }
    Ok(v)
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn check_header(path: &Path, actual: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = actual.iter().collect();
    if got != expected {
        return Err(Error::Dataset(format!("{}: expected header {:?}, found {:?}", path.display(), expected, got)));
    }
    Ok(())
}

/// Reads `variable,value` rows, grouped by variable name.
pub fn read_observations(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut r = open_csv(path)?;
    check_header(path, &r.headers().map_err(csv_err(path))?.clone(), &["variable", "value"])?;
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let name = rec.get(0).unwrap_or_default().trim().to_string();
        let v = parse_number(path, i + 1, rec.get(1).unwrap_or_default())?;
        match out.iter_mut().find(|(n, _)| *n == name) {
            Some((_, vals)) => vals.push(v),
            None => out.push((name, vec![v])),
        }
    }
    Ok(out)
}

/// Reads a design CSV whose header must equal `names`.
pub fn read_design(path: &Path, names: &[String]) -> Result<DMatrix<f64>> {
    let mut r = open_csv(path)?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    let expected: Vec<&str> = names.iter().map(String::as_str).collect();
    check_header(path, &header, &expected)?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        for s in rec.iter() {
            values.push(parse_number(path, i + 1, s)?);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, names.len(), &values))
}

pub fn read_outputs(path: &Path) -> Result<Vec<f64>> {
    let mut r = open_csv(path)?;
    check_header(path, &r.headers().map_err(csv_err(path))?.clone(), &[OUTPUT_COLUMN])?;
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(csv_err(path))?;
            parse_number(path, i + 1, rec.get(0).unwrap_or_default())
        })
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<StudyManifest> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.display().to_string(), source })
}

/// Loads and validates the dataset described by the manifest at `path`.
pub fn load_dataset(path: &Path) -> Result<StudyDataset> {
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let obs_path = resolve(&manifest.observations);
    let design_path = resolve(&manifest.design);
    let out_path = resolve(&manifest.outputs);
    for p in [&obs_path, &design_path, &out_path] {
        if !p.is_file() {
            return Err(Error::Dataset(format!("missing file {}", p.display())));
        }
    }
    if manifest.variables.is_empty() {
        return Err(Error::Dataset("manifest declares no variables".into()));
    }
    let mut obs = read_observations(&obs_path)?;
    let mut variables = Vec::with_capacity(manifest.variables.len());
    for decl in &manifest.variables {
        let pos = obs.iter().position(|(n, _)| *n == decl.name).ok_or_else(|| {
            Error::Dataset(format!("{}: no observations for variable {}", obs_path.display(), decl.name))
        })?;
        let (_, values) = obs.remove(pos);
        variables.push(InputVariableSpec::new(decl.name.clone(), decl.family, values)?);
    }
    if let Some((name, _)) = obs.first() {
        return Err(Error::Dataset(format!("{}: undeclared variable {name}", obs_path.display())));
    }
    let names: Vec<String> = manifest.variables.iter().map(|v| v.name.clone()).collect();
    let inputs = read_design(&design_path, &names)?;
    let outputs = read_outputs(&out_path)?;
    let ds = StudyDataset::new(variables, inputs, outputs, manifest.rescale_factor)?;
    for (name, count) in ds.observation_counts() {
        log::info!("{name}: {count} observations");
    }
    Ok(ds)
}

/// Writes the dataset's three CSV files and manifest into `dir`; returns the
/// manifest path.
pub fn write_dataset(dir: &Path, ds: &StudyDataset) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let obs_path = dir.join("observations.csv");
    let mut w = csv::Writer::from_path(&obs_path).map_err(csv_err(&obs_path))?;
    w.write_record(["variable", "value"]).map_err(csv_err(&obs_path))?;
    for v in &ds.variables {
        for x in v.observations() {
            w.write_record([v.name(), &format_f64(*x)]).map_err(csv_err(&obs_path))?;
        }
    }
    w.flush().map_err(io_err(&obs_path))?;

    let design_path = dir.join("design.csv");
    let mut w = csv::Writer::from_path(&design_path).map_err(csv_err(&design_path))?;
    w.write_record(ds.variable_names()).map_err(csv_err(&design_path))?;
    for i in 0..ds.n() {
        w.write_record(ds.inputs.row(i).iter().map(|v| format_f64(*v))).map_err(csv_err(&design_path))?;
    }
    w.flush().map_err(io_err(&design_path))?;

    let out_path = dir.join("outputs.csv");
    let mut w = csv::Writer::from_path(&out_path).map_err(csv_err(&out_path))?;
    w.write_record([OUTPUT_COLUMN]).map_err(csv_err(&out_path))?;
    for z in &ds.outputs_raw {
        w.write_record([format_f64(*z)]).map_err(csv_err(&out_path))?;
    }
    w.flush().map_err(io_err(&out_path))?;

    let manifest = StudyManifest {
        observations: "observations.csv".into(),
        design: "design.csv".into(),
        outputs: "outputs.csv".into(),
        rescale_factor: ds.rescale_factor,
        variables: ds.variables.iter().map(|v| VariableDecl { name: v.name().to_string(), family: v.family() }).collect(),
    };
    let path = dir.join("study.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}

/// One input of the synthetic simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthVariable {
    pub name: String,
    pub truth: InputParams,
    pub observations: usize,
    /// Output change (raw units) per standard deviation of this input.
    pub coefficient: f64,
}

/// Synthetic simulator
/// `z(s) = intercept + sum_k c_k u_k + wave * sin(u_a) + interaction * u_b u_c`
/// with `u_k` the input standardized by its true mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub variables: Vec<SynthVariable>,
    pub intercept: f64,
    pub wave: f64,
    pub wave_input: usize,
    pub interaction: f64,
    pub interaction_inputs: [usize; 2],
    pub rescale_factor: f64,
    pub design_rows: usize,
    /// Threshold in rescaled units.
    pub z_crit: f64,
    /// Direct Monte Carlo exceedance probability under the true inputs.
    pub p_true: Option<f64>,
    pub p_true_se: Option<f64>,
}

fn normal(name: &str, mean: f64, sd: f64, n: usize, c: f64) -> SynthVariable {
    SynthVariable { name: name.into(), truth: InputParams::Normal { mean, variance: sd * sd }, observations: n, coefficient: c }
}

fn weibull(name: &str, scale: f64, shape: f64, n: usize, c: f64) -> SynthVariable {
    SynthVariable { name: name.into(), truth: InputParams::Weibull { scale, shape }, observations: n, coefficient: c }
}

impl SynthConfig {
    /// Fifteen composite-material inputs with the observation counts and
    /// families of the original study, calibrated to an exceedance
    /// probability near `1e-4` at `z_crit = 3.0`.
    pub fn small_p() -> Self {
        Self {
            variables: vec![
                normal("X0001", 160.0, 6.0, 8, 40.0),
                normal("X0002", 5.2, 0.3, 4, -25.0),
                weibull("X0003", 1.60, 18.0, 3, 30.0),
                weibull("X0004", 2.60, 22.0, 4, 0.0),
                weibull("X0005", 0.25, 12.0, 3, -30.0),
                weibull("X0006", 0.08, 10.0, 4, 15.0),
                weibull("X0007", 0.12, 14.0, 4, 0.0),
                normal("X0008", 79.0, 3.5, 4, 30.0),
                normal("X0009", 8.0, 0.5, 4, -20.0),
                normal("X0010", 2.1, 0.15, 4, 10.0),
                weibull("X0011", 0.45, 9.0, 12, 35.0),
                weibull("X0012", 2.90, 16.0, 4, 0.0),
                weibull("X0013", 0.16, 8.0, 11, -25.0),
                weibull("X0014", 0.03, 11.0, 4, 10.0),
                weibull("X0015", 0.05, 13.0, 4, 0.0),
            ],
            intercept: 2680.0,
            wave: 15.0,
            wave_input: 1,
            interaction: 10.0,
            interaction_inputs: [2, 3],
            rescale_factor: DEFAULT_RESCALE,
            design_rows: 25,
            z_crit: 3.0,
            p_true: Some(SMALL_P_TRUTH.0),
            p_true_se: Some(SMALL_P_TRUTH.1),
        }
    }

    /// Purely affine simulator over the given Normal inputs.
    pub fn linear(intercept: f64, coefficients: &[f64], means: &[f64], sds: &[f64]) -> Self {
        let variables = coefficients
            .iter()
            .zip(means.iter().zip(sds))
            .enumerate()
            .map(|(k, (&c, (&m, &s)))| normal(&format!("X{:04}", k + 1), m, s, 10, c))
            .collect();
        Self {
            variables,
            intercept,
            wave: 0.0,
            wave_input: 0,
            interaction: 0.0,
            interaction_inputs: [0, 0],
            rescale_factor: DEFAULT_RESCALE,
            design_rows: 25,
            z_crit: 3.0,
            p_true: None,
            p_true_se: None,
        }
    }

    /// Keeps the first `k` inputs. The nonlinear terms are dropped when they
    /// refer to removed inputs.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.variables.len() {
            return Err(Error::InvalidParameter(format!("cannot keep {k} of {} inputs", self.variables.len())));
        }
        let mut c = self.clone();
        c.variables.truncate(k);
        if c.wave_input >= k {
            c.wave = 0.0;
        }
        if c.interaction_inputs.iter().any(|&i| i >= k) {
            c.interaction = 0.0;
        }
        if k != self.variables.len() {
            c.p_true = None;
            c.p_true_se = None;
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variables.is_empty() {
            return Err(Error::InvalidParameter("synthetic simulator needs at least one input".into()));
        }
        for v in &self.variables {
            v.truth.validate()?;
        }
        let k = self.variables.len();
        if (self.wave != 0.0 && self.wave_input >= k) || (self.interaction != 0.0 && self.interaction_inputs.iter().any(|&i| i >= k)) {
            return Err(Error::InvalidParameter("nonlinear term refers to a missing input".into()));
        }
        if !(self.rescale_factor > 0.0) {
            return Err(Error::InvalidParameter("rescale factor must be > 0".into()));
        }
        Ok(())
    }

    pub fn truths(&self) -> Vec<InputParams> {
        self.variables.iter().map(|v| v.truth).collect()
    }

    /// Linear-part standard deviation of the output in raw units.
    pub fn linear_sd(&self) -> f64 {
        self.variables.iter().map(|v| v.coefficient * v.coefficient).sum::<f64>().sqrt()
    }
}

/// Direct Monte Carlo estimate (probability, standard error) of the small-p
/// preset: `direct_mc_exceedance(&SynthConfig::small_p(), 100_000_000, 1)`,
/// 9296 exceedances.
pub const SMALL_P_TRUTH: (f64, f64) = (9.296e-5, 9.641128483657916e-7);

/// Simulator output in raw units.
pub fn synth_simulator(s: &[f64], config: &SynthConfig) -> f64 {
    let mut z = config.intercept;
    let mut u_wave = 0.0;
    let mut u_a = 0.0;
    let mut u_b = 0.0;
    for (k, (x, v)) in s.iter().zip(&config.variables).enumerate() {
        let u = (x - v.truth.mean()) / v.truth.std_dev();
        z += v.coefficient * u;
        if k == config.wave_input {
            u_wave = u;
        }
        if k == config.interaction_inputs[0] {
            u_a = u;
        }
        if k == config.interaction_inputs[1] {
            u_b = u;
        }
    }
    if config.wave != 0.0 {
        z += config.wave * u_wave.sin();
    }
    if config.interaction != 0.0 {
        z += config.interaction * u_a * u_b;
    }
    z
}

/// Exact exceedance probability of the affine simulator under independent
/// Normal inputs.
pub fn linear_exceedance(config: &SynthConfig) -> f64 {
    let sd = config.linear_sd();
    let t = (config.z_crit * config.rescale_factor - config.intercept) / sd;
    0.5 * erfc(t / std::f64::consts::SQRT_2)
}

/// Direct Monte Carlo estimate of `P(z(S) / rescale > z_crit)` with `S`
/// drawn from the true marginals; returns (estimate, standard error).
pub fn direct_mc_exceedance(config: &SynthConfig, draws: u64, seed: u64) -> Result<(f64, f64)> {
    config.validate()?;
    if draws == 0 {
        return Err(Error::InvalidParameter("need at least one draw".into()));
    }
    const CHUNK: u64 = 1 << 20;
    let chunks = draws.div_ceil(CHUNK);
    let threshold = config.z_crit * config.rescale_factor;
    let truths = config.truths();
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed::derived_stream(seed, "direct-mc", &[c]);
            let len = CHUNK.min(draws - c * CHUNK);
            let mut s = vec![0.0; truths.len()];
            let mut hits = 0u64;
            for _ in 0..len {
                for (x, t) in s.iter_mut().zip(&truths) {
                    *x = dists::sample(t, &mut rng);
                }
                if synth_simulator(&s, config) > threshold {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let p = hits as f64 / draws as f64;
    Ok((p, (p * (1.0 - p) / draws as f64).sqrt()))
}

/// Synthetic study: observations from the true marginals, a Latin hypercube
/// design through the maximum-likelihood marginals, and simulator outputs.
pub fn synth_study(seed: u64, n: usize, k: usize, config: &SynthConfig) -> Result<StudyDataset> {
    let config = config.truncated(k)?;
    config.validate()?;
    let mut variables = Vec::with_capacity(k);
    let mut marginals = Vec::with_capacity(k);
    for (i, v) in config.variables.iter().enumerate() {
        let mut rng = seed::derived_stream(seed, "synth-observations", &[i as u64]);
        let obs: Vec<f64> = (0..v.observations).map(|_| dists::sample(&v.truth, &mut rng)).collect();
        let spec = InputVariableSpec::new(v.name.clone(), v.truth.family(), obs)?;
        marginals.push(dists::mle_fit(&spec).unwrap_or(v.truth));
        variables.push(spec);
    }
    let mut rng = seed::derived_stream(seed, "synth-design", &[]);
    let lhs = failure::lhs_sample(n, &marginals, &mut rng)?;
    let outputs: Vec<f64> = (0..n)
        .map(|r| {
            let row: Vec<f64> = lhs.s.row(r).iter().cloned().collect();
            synth_simulator(&row, &config)
        })
        .collect();
    StudyDataset::new(variables, lhs.s, outputs, config.rescale_factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn simulator_at_the_means_is_the_intercept() {
        let c = SynthConfig::linear(2500.0, &[10.0, -5.0], &[1.0, 2.0], &[0.5, 0.1]);
        assert_eq!(synth_simulator(&[1.0, 2.0], &c), 2500.0);
        assert_abs_diff_eq!(synth_simulator(&[1.5, 2.0], &c), 2510.0, epsilon = 1e-12);
    }

    #[test]
    fn rescaling() {
        let c = SynthConfig::linear(2500.0, &[100.0], &[0.0], &[1.0]);
        let vars = vec![InputVariableSpec::new("X0001", Family::Normal, vec![0.1, 0.2, 0.3]).unwrap()];
        let inputs = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let ds = StudyDataset::new(vars, inputs, vec![2474.0, 2749.0], c.rescale_factor).unwrap();
        assert_eq!(ds.outputs(), vec![2.474, 2.749]);
    }

    #[test]
    fn row_count_mismatch_names_both() {
        let vars = vec![InputVariableSpec::new("X0001", Family::Normal, vec![0.1, 0.2, 0.3]).unwrap()];
        let err = StudyDataset::new(vars, DMatrix::zeros(3, 1), vec![1.0, 2.0], 1000.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('2'), "{msg}");
    }

    #[test]
    fn synth_study_is_reproducible() {
        let c = SynthConfig::small_p();
        let a = synth_study(11, 25, 15, &c).unwrap();
        let b = synth_study(11, 25, 15, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.n(), a.k()), (25, 15));
        assert_eq!(a.variables[2].observations().len(), 3);
    }
}
