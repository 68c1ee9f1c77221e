//! Run configuration. One TOML file drives every subcommand; relative input
//! paths resolve against the config file's directory and outputs go under
//! `--out`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use deal_copula::estimation::FitConfig;
use deal_copula::simulation::{PortfolioSpec, DEFAULT_THRESHOLDS};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub gen_data: GenDataConfig,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub report: ReportConfig,
    /// Directory relative paths resolve against; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Where a deal population comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "source")]
pub enum PopulationSource {
    /// Regenerated in-process from the shipped published tables.
    BuiltinPaper { seed: u64 },
    /// A deal file written by `gen-data` (or any compatible file).
    File { path: PathBuf },
}

impl Default for PopulationSource {
    fn default() -> Self {
        PopulationSource::BuiltinPaper { seed: 7 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableSource {
    #[default]
    BuiltinPaper,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub tables: TableSource,
    /// Required when `tables = "custom"`.
    pub marginals: Option<PathBuf>,
    pub pair_counts: Option<PathBuf>,
    pub seed: u64,
    pub output: PathBuf,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            tables: TableSource::BuiltinPaper,
            marginals: None,
            pair_counts: None,
            seed: 7,
            output: "deals.csv".into(),
        }
    }
}

/// Covariance used as the model truth or for simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "source")]
pub enum ParamsSource {
    /// The shipped published table with `alpha0 = 0`.
    SigmaFixture,
    /// A labeled 12 x 12 table on disk.
    SigmaFile { path: PathBuf, alpha0: f64 },
    /// `theta` of a fit report.
    FitReport { path: PathBuf },
}

impl Default for ParamsSource {
    fn default() -> Self {
        ParamsSource::SigmaFixture
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeSource {
    /// Outcomes are read from the deal file.
    #[default]
    File,
    /// One joint realization drawn from `truth`.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub deals: PopulationSource,
    pub outcomes: OutcomeSource,
    pub truth: ParamsSource,
    pub outcome_seed: u64,
    pub output: PathBuf,
    pub settings: FitConfig,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            deals: PopulationSource::default(),
            outcomes: OutcomeSource::File,
            truth: ParamsSource::SigmaFixture,
            outcome_seed: 1,
            output: "fit_report.json".into(),
            settings: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub population: PopulationSource,
    pub params: ParamsSource,
    pub replications: u64,
    pub seed: u64,
    pub thresholds: Vec<u64>,
    /// Sizes for the standard nine designs; ignored when `portfolios` is set.
    pub sizes: Vec<usize>,
    pub portfolio_seed: u64,
    pub portfolios: Vec<PortfolioSpec>,
    /// Deal pairs for the correlation histograms; 0 skips them.
    pub correlation_pairs: usize,
    pub output: PathBuf,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            population: PopulationSource::default(),
            params: ParamsSource::SigmaFixture,
            replications: 50_000,
            seed: 1,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            sizes: vec![20, 40, 80],
            portfolio_seed: 1,
            portfolios: Vec::new(),
            correlation_pairs: 100_000,
            output: "summaries.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub inputs: Vec<PathBuf>,
    /// Restricts the request to one portfolio size.
    pub n: Option<usize>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            inputs: vec!["summaries.json".into()],
            n: None,
        }
    }
}

impl RunConfig {
    /// Defaults for every section, suitable for the builtin reproduction.
    pub fn builtin() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            ..Self::default()
        }
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Resolves an input path and checks that it exists.
    pub fn input(&self, path: &Path) -> Result<PathBuf> {
        let full = if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        };
        if !full.exists() {
            return Err(CliError::Config(format!("input path does not exist: {}", full.display())));
        }
        Ok(full)
    }
}
