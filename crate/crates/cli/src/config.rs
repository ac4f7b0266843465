//! Experiment configuration: a single JSON document, with CLI flags able to
//! override the top-level scalars.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use epsel_core::Ensemble;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Se,
    Compare,
    Sweep,
    Diagnose,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "simulate" => Some(Mode::Simulate),
            "se" => Some(Mode::Se),
            "compare" => Some(Mode::Compare),
            "sweep" => Some(Mode::Sweep),
            "diagnose" => Some(Mode::Diagnose),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Simulate => "simulate",
            Mode::Se => "se",
            Mode::Compare => "compare",
            Mode::Sweep => "sweep",
            Mode::Diagnose => "diagnose",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub rho_s: f64,
    pub active_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    /// Scale of the vanishing-identity band `tol_scale * N^{-1/2}`.
    #[serde(default = "default_tol_scale")]
    pub tol_scale: f64,
    /// Relative band for covariance matches.
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    /// Per-identity overrides of `tol_scale`, keyed by identity name.
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
}

fn default_tol_scale() -> f64 {
    5.0
}

fn default_rel_tol() -> f64 {
    0.05
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            tol_scale: default_tol_scale(),
            rel_tol: default_rel_tol(),
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Delta,
    Sigma2,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Delta => "delta",
            SweepAxis::Sigma2 => "sigma2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    #[serde(default = "default_mc_samples")]
    pub samples: usize,
    pub seed: Option<u64>,
}

fn default_mc_samples() -> usize {
    1_000_000
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: default_mc_samples(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub n: usize,
    pub delta: f64,
    pub sigma2: f64,
    pub ensemble: Ensemble,
    pub prior: PriorConfig,
    pub t: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub formats: Vec<Format>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    /// Relative early-stop tolerance on the empirical MSE; 0 disables.
    /// Comparison runs always keep the full horizon.
    #[serde(default = "default_early_stop")]
    pub early_stop_tol: f64,
    /// Reference dimension used when the limiting spectrum has to be
    /// sampled (i.i.d. Gaussian ensemble).
    #[serde(default = "default_reference_dim")]
    pub se_reference_dim: usize,
    #[serde(default)]
    pub mc: McConfig,
    /// Damping hook; unset means the plain algorithm.
    #[serde(default)]
    pub damping: Option<f64>,
    /// Fixed timestamp for reproducible file names and metadata (tests).
    #[serde(default)]
    pub timestamp_override: Option<String>,
}

fn default_trials() -> usize {
    1
}

fn default_output_dir() -> String {
    "out".to_string()
}

fn default_early_stop() -> f64 {
    1e-8
}

fn default_reference_dim() -> usize {
    2048
}

impl ExperimentConfig {
    /// Measurement rows `M = round(delta * N)`.
    pub fn m(&self) -> usize {
        (self.delta * self.n as f64).round() as usize
    }

    /// The ratio actually realized after rounding M.
    pub fn realized_delta(&self) -> f64 {
        self.m() as f64 / self.n as f64
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if self.n == 0 {
            problems.push("n: must be >= 1".to_string());
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            problems.push(format!("delta: must be in (0, 1], got {}", self.delta));
        } else {
            let m = self.m();
            if m == 0 || m > self.n {
                problems.push(format!("delta: round(delta*n) = {m} is out of range"));
            }
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            problems.push(format!("sigma2: must be > 0, got {}", self.sigma2));
        }
        if !(self.prior.rho_s > 0.0 && self.prior.rho_s <= 1.0) {
            problems.push(format!(
                "prior.rho_s: must be in (0, 1], got {}",
                self.prior.rho_s
            ));
        }
        if (self.prior.rho_s * self.prior.active_var - 1.0).abs() > 1e-9 {
            problems.push(format!(
                "prior: rho_s * active_var must equal 1, got {}",
                self.prior.rho_s * self.prior.active_var
            ));
        }
        if self.t == 0 {
            problems.push("t: must be >= 1".to_string());
        }
        match self.mode {
            Mode::Simulate | Mode::Diagnose => {
                if self.trials == 0 {
                    problems.push("trials: must be >= 1".to_string());
                }
            }
            Mode::Compare => {
                if self.trials < 2 {
                    problems.push(format!(
                        "trials: compare mode needs >= 2, got {}",
                        self.trials
                    ));
                }
            }
            Mode::Sweep => match &self.sweep {
                None => problems.push("sweep: required for sweep mode".to_string()),
                Some(sweep) => {
                    if sweep.values.is_empty() {
                        problems.push("sweep.values: must be nonempty".to_string());
                    }
                    if sweep.values.windows(2).any(|w| w[0] >= w[1]) {
                        problems
                            .push("sweep.values: must be strictly ascending".to_string());
                    }
                    let bad = |v: &f64| match sweep.axis {
                        SweepAxis::Delta => !(*v > 0.0 && *v <= 1.0),
                        SweepAxis::Sigma2 => !(*v > 0.0),
                    };
                    if sweep.values.iter().any(bad) {
                        problems.push(format!(
                            "sweep.values: out of range for axis {}",
                            sweep.axis
                        ));
                    }
                }
            },
            Mode::Se => {}
        }
        if let Ensemble::CustomSpectrum { sv } = &self.ensemble {
            if sv.len() != self.m() {
                problems.push(format!(
                    "ensemble.sv: length {} must equal M = {}",
                    sv.len(),
                    self.m()
                ));
            }
        }
        if !(self.tolerances.tol_scale > 0.0) {
            problems.push("tolerances.tol_scale: must be > 0".to_string());
        }
        if !(self.tolerances.rel_tol > 0.0) {
            problems.push("tolerances.rel_tol: must be > 0".to_string());
        }
        if self.early_stop_tol < 0.0 {
            problems.push("early_stop_tol: must be >= 0 (0 disables)".to_string());
        }
        if self.mc.samples < 100_000 {
            problems.push(format!(
                "mc.samples: must be >= 100000, got {}",
                self.mc.samples
            ));
        }
        if self.se_reference_dim < 8 {
            problems.push("se_reference_dim: must be >= 8".to_string());
        }
        if let Some(beta) = self.damping {
            if !(beta > 0.0 && beta <= 1.0) {
                problems.push(format!("damping: must be in (0, 1], got {beta}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(problems))
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Validation(vec![format!("config parse error: {e}")])
        })
    }

    /// Canonical JSON form (stable field order, pretty-printed).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }
}
