//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [game]
//! kind = "random-matrix"
//! k_nu = 50
//! k_mu = 50
//! entry_range = [-1.0, 1.0]
//!
//! [geometry]
//! kind = "entropy"
//!
//! [solver]
//! schemes = ["simultaneous", "sequential"]
//! n_list = [100, 400, 1600]
//! step = { rule = "theoretical" }
//! seeds = [1, 2, 3]
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Games, kernels and GAN families are chosen by name from a fixed catalog;
//! nothing in a config is executed.

use std::fs;
use std::path::{Path, PathBuf};

use mda_core::Scheme;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub game: GameSpec,
    #[serde(default)]
    pub geometry: GeometrySpec,
    pub solver: SolverSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub verify: VerifySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GameSpec {
    /// The 2×2 game on `{1, -1}` with kernel `x·y`.
    MatchingPennies {
        #[serde(default)]
        regularization: Option<Regularization>,
    },
    /// Entries drawn uniformly from `entry_range`, seeded by the run seed.
    RandomMatrix {
        k_nu: usize,
        k_mu: usize,
        #[serde(default = "default_entry_range")]
        entry_range: [f64; 2],
        #[serde(default)]
        regularization: Option<Regularization>,
    },
    /// A catalog kernel tabulated on equispaced grids over `[lo, hi]`.
    Kernel {
        name: String,
        k_nu: usize,
        k_mu: usize,
        #[serde(default = "default_kernel_range")]
        range: [f64; 2],
        #[serde(default)]
        regularization: Option<Regularization>,
    },
    GanToy(GanSpec),
}

fn default_entry_range() -> [f64; 2] {
    [-1.0, 1.0]
}

fn default_kernel_range() -> [f64; 2] {
    [-1.0, 1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regularization {
    pub sigma_nu: f64,
    pub sigma_mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanSpec {
    #[serde(default = "default_generator")]
    pub generator: String,
    #[serde(default = "default_discriminator")]
    pub discriminator: String,
    /// Bandwidth of the Gaussian-bump discriminators.
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    pub theta_g: GridSpec,
    pub theta_d: GridSpec,
    pub samples: usize,
    pub true_shift: f64,
    pub data_seed: u64,
}

fn default_generator() -> String {
    "shift".into()
}

fn default_discriminator() -> String {
    "gaussian-bump".into()
}

fn default_bandwidth() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeometrySpec {
    #[default]
    Entropy,
    /// `φ(t) = (t^q - t)/(q - 1)` against the uniform reference.
    Tsallis { q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepRule {
    Theoretical {
        #[serde(default = "default_tau_max")]
        tau_max: f64,
    },
    Fixed {
        tau: f64,
    },
}

fn default_tau_max() -> f64 {
    1.0
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Theoretical {
            tau_max: default_tau_max(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartSpec {
    #[default]
    Uniform,
    /// Random interior measures drawn from the run seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub schemes: Vec<String>,
    pub n_list: Vec<usize>,
    #[serde(default)]
    pub step: StepRule,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub start: StartSpec,
    /// Defaults to one record per run.
    #[serde(default)]
    pub record_every: Option<usize>,
    #[serde(default = "default_implicit_tol")]
    pub implicit_tol: f64,
    #[serde(default = "default_implicit_max_inner")]
    pub implicit_max_inner: usize,
}

fn default_implicit_tol() -> f64 {
    1e-12
}

fn default_implicit_max_inner() -> usize {
    1_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_json_rows")]
    pub json: String,
    #[serde(default = "default_summary")]
    pub summary: String,
    /// Fill the `wall_s` column. Off by default so repeated runs produce
    /// identical files.
    #[serde(default)]
    pub wall_clock: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_csv() -> String {
    "results.csv".into()
}

fn default_json_rows() -> String {
    "results.json".into()
}

fn default_summary() -> String {
    "summary.json".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            csv: default_csv(),
            json: default_json_rows(),
            summary: default_summary(),
            wall_clock: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    #[default]
    None,
    /// Flip the sign of both flat derivatives inside the solver.
    FlippedProx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    #[serde(default = "yes")]
    pub tau2_bound: bool,
    #[serde(default = "yes")]
    pub three_point: bool,
    #[serde(default = "yes")]
    pub pinsker: bool,
    #[serde(default = "yes")]
    pub primal_dual: bool,
    #[serde(default = "yes")]
    pub commutator: bool,
    #[serde(default = "yes")]
    pub quadratic_growth: bool,
    #[serde(default = "yes")]
    pub finite_differences: bool,
    #[serde(default = "yes")]
    pub first_order: bool,
    #[serde(default = "yes")]
    pub competitive_chain: bool,
    #[serde(default = "yes")]
    pub jensen: bool,
    #[serde(default = "yes")]
    pub legendre: bool,
    #[serde(default = "yes")]
    pub dual_lipschitz: bool,
    #[serde(default = "yes")]
    pub convexity: bool,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_commutator_taus")]
    pub commutator_taus: Vec<f64>,
    #[serde(default = "default_commutator_steps")]
    pub commutator_steps: usize,
    #[serde(default = "default_min_commutator_slope")]
    pub min_commutator_slope: f64,
    /// Steps of the runs that feed the trajectory checks.
    #[serde(default = "default_run_steps")]
    pub run_steps: usize,
    #[serde(default)]
    pub fault: Fault,
}

fn yes() -> bool {
    true
}

fn default_samples() -> usize {
    500
}

fn default_commutator_taus() -> Vec<f64> {
    vec![0.4, 0.2, 0.1, 0.05]
}

fn default_commutator_steps() -> usize {
    500
}

fn default_min_commutator_slope() -> f64 {
    2.7
}

fn default_run_steps() -> usize {
    1_000
}

impl Default for VerifySpec {
    fn default() -> Self {
        toml::from_str("").expect("every verify field has a default")
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn schemes(&self) -> Result<Vec<Scheme>> {
        self.solver
            .schemes
            .iter()
            .map(|s| s.parse().map_err(|_| CliError::Config(format!("unknown scheme '{s}'"))))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.solver.schemes.is_empty() {
            return bad("solver.schemes must not be empty".into());
        }
        let schemes = self.schemes()?;
        let mut sorted = schemes.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != schemes.len() {
            return bad("solver.schemes lists a scheme twice".into());
        }
        if self.solver.n_list.is_empty() {
            return bad("solver.n_list must not be empty".into());
        }
        if self.solver.n_list[0] == 0 || self.solver.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return bad("solver.n_list must be positive and strictly increasing".into());
        }
        if self.solver.seeds.is_empty() {
            return bad("solver.seeds must not be empty".into());
        }
        if self.solver.record_every == Some(0) {
            return bad("solver.record_every must be at least 1".into());
        }
        if !(self.solver.implicit_tol > 0.0) || self.solver.implicit_max_inner == 0 {
            return bad("implicit tolerance and inner budget must be positive".into());
        }
        match self.solver.step {
            StepRule::Fixed { tau } if !(tau > 0.0 && tau.is_finite()) => {
                return bad(format!("fixed step size must be positive, got {tau}"))
            }
            StepRule::Theoretical { tau_max } if !(tau_max > 0.0 && tau_max.is_finite()) => {
                return bad(format!("tau_max must be positive, got {tau_max}"))
            }
            _ => {}
        }
        if let GeometrySpec::Tsallis { q } = self.geometry {
            if !(q > 0.0) || q == 1.0 {
                return bad(format!("Tsallis index must be positive and different from 1, got {q}"));
            }
        }
        crate::catalog::validate_game(&self.game)?;
        let v = &self.verify;
        if v.commutator_taus.len() < 3 || v.commutator_steps == 0 || v.run_steps == 0 || v.samples == 0 {
            return bad("verify needs ≥ 3 commutator step sizes and positive step/sample counts".into());
        }
        Ok(())
    }
}
