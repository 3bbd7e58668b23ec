//! Run configuration. Every field except the system description has a
//! default; the resolved form (defaults and derived values filled in) is
//! written next to every run's outputs.

use std::path::Path;

use affinedim::estimators::RadiusSchedule;
use affinedim::matrix::Matrix;
use affinedim::measure::SymbolicMeasure;
use affinedim::sampler::{Domain, TranslationModel};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub ifs: IfsConfig,
    pub measure: MeasureConfig,
    #[serde(default)]
    pub translations: TranslationConfig,
    #[serde(default)]
    pub pressure: PressureConfig,
    #[serde(default)]
    pub dq: DqConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    /// Cloud read by `estimate`.
    #[serde(default)]
    pub input: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfsConfig {
    /// Optional; checked against the matrices when present.
    #[serde(default)]
    pub dim: Option<usize>,
    /// Row-major matrices.
    pub maps: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureConfig {
    /// Uniform when `p` is omitted.
    Bernoulli {
        #[serde(default)]
        p: Option<Vec<f64>>,
    },
    Markov { weights: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TranslationConfig {
    FixedPerMap { vectors: Vec<Vec<f64>> },
    RandomPerMap { radius: f64 },
    RandomPerNode { domain: Domain },
}

impl Default for TranslationConfig {
    fn default() -> Self {
        Self::RandomPerMap { radius: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PressureConfig {
    pub s_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    pub k_max: usize,
    pub cap: u64,
    pub mc_samples: usize,
    pub mc_depths: Vec<usize>,
}

impl Default for PressureConfig {
    fn default() -> Self {
        Self {
            s_grid: vec![0.5, 1.0, 1.5],
            q_grid: vec![0.0, 1.0, 2.0],
            k_max: 10,
            cap: affinedim::code_space::DEFAULT_ENUMERATION_CAP,
            mc_samples: 0,
            mc_depths: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqConfig {
    pub q_grid: Vec<f64>,
    /// Working level; chosen from the alphabet size when omitted.
    pub level: Option<usize>,
    pub tol: f64,
    pub s_cap: f64,
}

impl Default for DqConfig {
    fn default() -> Self {
        Self {
            q_grid: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            level: None,
            tol: 1e-9,
            s_cap: 1e3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudFormat {
    Binary,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub n: usize,
    /// Truncation depth; chosen so the truncation error is below 1e-9 when
    /// omitted.
    pub depth: Option<usize>,
    pub format: CloudFormat,
    pub svg: bool,
    pub svg_points: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n: 100_000,
            depth: None,
            format: CloudFormat::Binary,
            svg: false,
            svg_points: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Chosen from the cloud when omitted.
    pub schedule: Option<RadiusSchedule>,
    pub q_values: Vec<f64>,
    pub query_count: usize,
    pub min_occupancy: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            schedule: None,
            q_values: vec![0.5, 1.0, 2.0],
            query_count: 2000,
            min_occupancy: 32.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub enabled: bool,
    /// Defaults to `0.9 · min(d_1, N)`, nudged off integers.
    pub s: Option<f64>,
    pub n_pairs: usize,
    pub n_draws: usize,
    pub max_prefix: usize,
    pub depth: Option<usize>,
    pub spread_limit: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            s: None,
            n_pairs: 100,
            n_draws: 40,
            max_prefix: 10,
            depth: None,
            spread_limit: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Allowed gap between empirical and theoretical dimensions. Empirical
    /// choice, not a theorem.
    pub tolerance: f64,
    /// Slack around the Gibbs bracket.
    pub bracket_slack: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            tolerance: 0.1,
            bracket_slack: 0.1,
        }
    }
}

/// Sub-seed indices derived from the master seed.
pub mod seeds {
    pub const TRANSLATIONS: u64 = 1;
    pub const SAMPLING: u64 = 2;
    pub const QUERIES: u64 = 3;
    pub const KERNEL: u64 = 4;
    pub const MONTE_CARLO: u64 = 5;
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| {
            CliError::Usage(format!("config error at line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn seed(&self, index: u64) -> u64 {
        affinedim::rng::derive_seed(self.seed, index)
    }

    pub fn maps(&self) -> Result<Vec<Matrix>, CliError> {
        if self.ifs.maps.is_empty() {
            return Err(CliError::Usage("ifs.maps: at least one matrix is required".into()));
        }
        let maps = self
            .ifs
            .maps
            .iter()
            .enumerate()
            .map(|(i, rows)| Matrix::from_rows(rows).map_err(|e| CliError::Usage(format!("ifs.maps[{i}]: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let n = maps[0].dim();
        if let Some((i, m)) = maps.iter().enumerate().find(|(_, m)| m.dim() != n) {
            return Err(CliError::Usage(format!("ifs.maps[{i}]: dimension {} differs from {n}", m.dim())));
        }
        if let Some(d) = self.ifs.dim {
            if d != n {
                return Err(CliError::Usage(format!("ifs.dim is {d} but the matrices are {n}×{n}")));
            }
        }
        Ok(maps)
    }

    pub fn dim(&self) -> Result<usize, CliError> {
        Ok(self.maps()?[0].dim())
    }

    pub fn measure(&self) -> Result<SymbolicMeasure, CliError> {
        let m = self.ifs.maps.len();
        let mu = match &self.measure {
            MeasureConfig::Bernoulli { p: None } => SymbolicMeasure::bernoulli(vec![1.0 / m as f64; m]),
            MeasureConfig::Bernoulli { p: Some(p) } => SymbolicMeasure::bernoulli(p.clone()),
            MeasureConfig::Markov { weights } => SymbolicMeasure::markov(weights),
        }
        .map_err(|e| CliError::Usage(format!("measure: {e}")))?;
        if mu.alphabet() != m {
            return Err(CliError::Usage(format!(
                "measure: alphabet {} does not match {m} maps",
                mu.alphabet()
            )));
        }
        Ok(mu)
    }

    pub fn translation_model(&self) -> TranslationModel {
        let seed = self.seed(seeds::TRANSLATIONS);
        match &self.translations {
            TranslationConfig::FixedPerMap { vectors } => TranslationModel::FixedPerMap {
                vectors: vectors.clone(),
            },
            TranslationConfig::RandomPerMap { radius } => TranslationModel::RandomPerMap { radius: *radius, seed },
            TranslationConfig::RandomPerNode { domain } => TranslationModel::RandomPerNode {
                domain: domain.clone(),
                seed,
            },
        }
    }

    /// Working level for root finding: the largest `k ≤ 14` with at most
    /// `2^18` words.
    pub fn dq_level(&self) -> usize {
        self.dq.level.unwrap_or_else(|| {
            let m = self.ifs.maps.len().max(2) as f64;
            ((18.0 * 2f64.ln() / m.ln()).floor() as usize).clamp(2, 14)
        })
    }
}
