//! Experiment configuration: a TOML file with one section per pipeline stage.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;

use quantswitch::quantizer::{build_log_quantizer, QuantizerPartition};
use quantswitch::synthesis::{AlgorithmParams, CheckOptions, LyapunovCertificate};
use quantswitch::system::{Mode, Plant};

use crate::error::{CliError, Stage};

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub plant: PlantSpec,
    pub quantizer: QuantizerSpec,
    #[serde(default)]
    pub synthesis: Option<SynthesisSpec>,
    #[serde(default)]
    pub certificate: Option<CertificateSpec>,
    #[serde(default)]
    pub check: Option<CheckSpec>,
    #[serde(default)]
    pub bounds: BoundsSpec,
    #[serde(default)]
    pub campaign: Option<CampaignSpec>,
    #[serde(default)]
    pub adversarial: Option<AdversarialSpec>,
    #[serde(default)]
    pub expected: Option<ExpectedSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSource {
    #[default]
    AsGiven,
    Lqr,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub sampling_period: f64,
    pub modes: Vec<ModeSpec>,
    #[serde(default)]
    pub gains: GainSource,
    #[serde(default)]
    pub lqr_q: Option<Matrix>,
    #[serde(default)]
    pub lqr_r: Option<Matrix>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub a: Matrix,
    pub b: Matrix,
    pub k: Matrix,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerSpec {
    pub xi0: f64,
    pub eta: f64,
    pub levels: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSpec {
    pub outer_ball: f64,
    pub inner_ball: f64,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub delta1: Option<f64>,
    #[serde(default)]
    pub decrease_rate: Option<f64>,
    #[serde(default)]
    pub samples_per_run: Option<usize>,
    #[serde(default)]
    pub time_samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub max_runs: Option<usize>,
}

/// A stored certificate file, or the matrix and radii inline.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub p: Option<Matrix>,
    #[serde(default)]
    pub decrease_rate: Option<f64>,
    #[serde(default)]
    pub outer_radius: Option<f64>,
    #[serde(default)]
    pub inner_radius: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    #[serde(default = "default_grid_density")]
    pub grid_density: usize,
    #[serde(default = "default_time_samples")]
    pub time_samples: usize,
}

fn default_grid_density() -> usize {
    50
}

fn default_time_samples() -> usize {
    5
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    #[serde(default)]
    pub d_override: Option<f64>,
    #[serde(default)]
    pub refined_grid: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSpec {
    /// Dwell multiple `n`; the computed `n_min` when absent.
    #[serde(default)]
    pub dwell: Option<u64>,
    pub p_switch: f64,
    pub seeds: u64,
    #[serde(default = "one")]
    pub first_seed: u64,
    pub horizon: f64,
    /// Initial states sit on the boundary of `Ē_P(R − margin)`.
    #[serde(default = "default_margin")]
    pub initial_margin: f64,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default = "yes")]
    pub write_trajectories: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantSpec {
    Global,
    Anchored,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialSpec {
    pub n: u64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub horizon: f64,
    #[serde(default = "both_variants")]
    pub variants: Vec<VariantSpec>,
    #[serde(default = "default_initial_states")]
    pub initial_states: usize,
    #[serde(default = "default_margin")]
    pub initial_margin: f64,
    #[serde(default = "default_probes")]
    pub probes: usize,
}

/// Reference values the summary compares against.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedSpec {
    #[serde(default)]
    pub n_min: Option<u64>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default = "default_kappa_tol")]
    pub kappa_rel_tol: f64,
    #[serde(default)]
    pub d: Option<f64>,
    #[serde(default = "default_d_tol")]
    pub d_rel_tol: f64,
}

fn one() -> u64 {
    1
}

fn yes() -> bool {
    true
}

fn default_margin() -> f64 {
    0.001
}

fn default_probes() -> usize {
    quantswitch::simulate::DEFAULT_PROBES
}

fn default_eps() -> f64 {
    1e-3
}

fn both_variants() -> Vec<VariantSpec> {
    vec![VariantSpec::Global, VariantSpec::Anchored]
}

fn default_initial_states() -> usize {
    4
}

fn default_kappa_tol() -> f64 {
    1e-3
}

fn default_d_tol() -> f64 {
    0.10
}

/// The bundled reference configuration.
pub const REFERENCE_CONFIG: &str = include_str!("../configs/reference.toml");

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::new(Stage::Config, e.to_string()))
}

/// Reads a config; relative paths inside it resolve against its directory.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new(Stage::Config, format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((parse_config(&text)?, base))
}

pub fn to_matrix(rows: &Matrix, what: &str) -> Result<DMatrix<f64>, CliError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::new(
            Stage::Config,
            format!("{what}: rows must be non-empty and of equal length"),
        ));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

impl ExperimentConfig {
    pub fn build_plant(&self) -> Result<Plant, CliError> {
        let modes = self
            .plant
            .modes
            .iter()
            .enumerate()
            .map(|(i, m)| {
                Ok(Mode::new(
                    to_matrix(&m.a, &format!("mode {i} a"))?,
                    to_matrix(&m.b, &format!("mode {i} b"))?,
                    to_matrix(&m.k, &format!("mode {i} k"))?,
                ))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let plant = Plant::new(modes, self.plant.sampling_period).map_err(|e| CliError::core(Stage::Plant, e))?;
        match self.plant.gains {
            GainSource::AsGiven => Ok(plant),
            GainSource::Lqr => {
                let n = plant.states();
                let m = plant.inputs();
                let q = match &self.plant.lqr_q {
                    Some(q) => to_matrix(q, "lqr_q")?,
                    None => DMatrix::identity(n, n),
                };
                let r = match &self.plant.lqr_r {
                    Some(r) => to_matrix(r, "lqr_r")?,
                    None => DMatrix::identity(m, m),
                };
                plant.refine_gains_lqr(&q, &r).map_err(|e| CliError::core(Stage::Plant, e))
            }
        }
    }

    pub fn build_quantizer(&self, dim: usize) -> Result<QuantizerPartition, CliError> {
        let q = &self.quantizer;
        build_log_quantizer(q.xi0, q.eta, q.levels, dim).map_err(|e| CliError::core(Stage::Quantizer, e))
    }

    pub fn algorithm_params(&self, seed: Option<u64>) -> Option<AlgorithmParams> {
        let s = self.synthesis.as_ref()?;
        let d = AlgorithmParams::default();
        Some(AlgorithmParams {
            outer_ball: s.outer_ball,
            inner_ball: s.inner_ball,
            delta: s.delta.unwrap_or(d.delta),
            delta1: s.delta1.unwrap_or(d.delta1),
            decrease_rate: s.decrease_rate.unwrap_or(d.decrease_rate),
            samples_per_run: s.samples_per_run.unwrap_or(d.samples_per_run),
            time_samples: s.time_samples.unwrap_or(d.time_samples),
            seed: seed.or(s.seed).unwrap_or(d.seed),
            max_runs: s.max_runs.unwrap_or(d.max_runs),
            initial: None,
        })
    }

    /// The certificate given by the config, if any.
    pub fn stored_certificate(&self, base: &Path) -> Result<Option<LyapunovCertificate>, CliError> {
        let Some(spec) = &self.certificate else {
            return Ok(None);
        };
        let cert = match (&spec.path, &spec.p) {
            (Some(path), None) => {
                let full = base.join(path);
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| CliError::new(Stage::Config, format!("cannot read {}: {e}", full.display())))?;
                LyapunovCertificate::from_text(&text)
            }
            (None, Some(p)) => {
                let missing = |what: &str| CliError::new(Stage::Config, format!("inline certificate needs {what}"));
                LyapunovCertificate::new(
                    to_matrix(p, "certificate p")?,
                    spec.decrease_rate.ok_or_else(|| missing("decrease_rate"))?,
                    spec.outer_radius.ok_or_else(|| missing("outer_radius"))?,
                    spec.inner_radius.ok_or_else(|| missing("inner_radius"))?,
                )
            }
            _ => {
                return Err(CliError::new(
                    Stage::Config,
                    "certificate needs exactly one of `path` and `p`".into(),
                ))
            }
        };
        cert.map(Some).map_err(|e| CliError::core(Stage::Config, e))
    }

    pub fn check_options(&self) -> Option<CheckOptions> {
        self.check.as_ref().map(|c| CheckOptions::new(c.grid_density, c.time_samples))
    }
}
