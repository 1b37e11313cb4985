//! JSON run configurations, one per CLI command.
//!
//! Relative paths inside a config are resolved against the directory of the
//! config file.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backtest::WindowScheme;
use crate::dataflow::{ColumnMap, FeatureCase, TargetKind};
use crate::error::{Error, Result};
use crate::methods::{self, MethodConfig};
use crate::simulation::{DgpSpec, Split};

fn default_reps() -> usize {
    10
}

fn default_train_frac() -> f64 {
    Split::default().train_frac
}

fn default_refit() -> usize {
    1
}

fn default_cases() -> Vec<FeatureCase> {
    vec![FeatureCase::Base]
}

fn default_horizons() -> Vec<usize> {
    vec![1]
}

fn default_windows() -> Vec<WindowScheme> {
    vec![WindowScheme::cumulative()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub grid: Vec<DgpSpec>,
    #[serde(default = "methods::simulation_methods")]
    pub methods: Vec<MethodConfig>,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// When set, replaces the seed of every grid row.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("grid: at least one row is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods: at least one method is required".into()));
        }
        if self.reps == 0 {
            return Err(Error::Config("reps: must be at least 1".into()));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!("train_frac: must lie in (0, 1), got {}", self.train_frac)));
        }
        for (i, row) in self.grid.iter().enumerate() {
            row.validate().map_err(|e| Error::Config(format!("grid[{i}]: {e}")))?;
        }
        for (i, m) in self.methods.iter().enumerate() {
            m.validate().map_err(|e| Error::Config(format!("methods[{i}]: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestConfig {
    pub data: PathBuf,
    #[serde(default)]
    pub column_map: ColumnMap,
    #[serde(default = "methods::equity_premium_methods")]
    pub methods: Vec<MethodConfig>,
    #[serde(default = "default_cases")]
    pub cases: Vec<FeatureCase>,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default)]
    pub target: TargetKind,
    #[serde(default = "default_windows")]
    pub windows: Vec<WindowScheme>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_refit")]
    pub refit_every: usize,
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("methods: at least one method is required".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            m.validate().map_err(|e| Error::Config(format!("methods[{i}]: {e}")))?;
            if matches!(m, MethodConfig::Oracle) {
                return Err(Error::Config(format!("methods[{i}]: oracle is simulation-only")));
            }
        }
        if self.cases.is_empty() {
            return Err(Error::Config("cases: at least one feature case is required".into()));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config("horizons: must be nonempty and positive".into()));
        }
        if self.windows.is_empty() {
            return Err(Error::Config("windows: at least one window scheme is required".into()));
        }
        for (i, w) in self.windows.iter().enumerate() {
            w.validate().map_err(|e| Error::Config(format!("windows[{i}]: {e}")))?;
        }
        if self.refit_every == 0 {
            return Err(Error::Config("refit_every: must be at least 1".into()));
        }
        self.column_map.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorsConfig {
    pub data: PathBuf,
    #[serde(default)]
    pub column_map: ColumnMap,
    /// A `deep` method; defaults to DL1.
    #[serde(default = "default_factor_method")]
    pub method: MethodConfig,
    #[serde(default = "default_case")]
    pub case: FeatureCase,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_factor_method() -> MethodConfig {
    MethodConfig::deep_monthly("DL1", &[32, 16, 8])
}

fn default_case() -> FeatureCase {
    FeatureCase::Base
}

fn default_horizon() -> usize {
    1
}

impl FactorsConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.method, MethodConfig::Deep { .. }) {
            return Err(Error::Config("method: factors need a deep method".into()));
        }
        self.method.validate().map_err(|e| Error::Config(format!("method: {e}")))?;
        if self.horizon == 0 {
            return Err(Error::Config("horizon: must be positive".into()));
        }
        self.column_map.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// `forecasts.csv` files written by `backtest`.
    pub forecasts: Vec<PathBuf>,
    /// When set, every other method is compared against this one with the
    /// Diebold-Mariano test.
    #[serde(default)]
    pub dm_baseline: Option<String>,
}

impl ReportConfig {
    pub fn validate(&self) -> Result<()> {
        if self.forecasts.is_empty() {
            return Err(Error::Config("forecasts: at least one file is required".into()));
        }
        Ok(())
    }
}

/// Reads and parses a config file. Unreadable files and parse errors are
/// config errors.
pub fn load<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// `path` relative to the directory holding `config`.
pub fn resolve(config: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    config.parent().map(|d| d.join(path)).unwrap_or_else(|| path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_defaults() {
        let c: SimulateConfig =
            serde_json::from_str(r#"{"grid": [{"depth": "one_layer", "k1": 5, "t": 500, "target_r2": 0.25}]}"#).unwrap();
        assert_eq!(c.reps, 10);
        assert_eq!(c.grid[0].p, 100);
        assert_eq!(c.grid[0].seed, 1);
        assert_eq!(c.methods.len(), 8);
        c.validate().unwrap();
    }

    #[test]
    fn errors_name_the_field() {
        let c: SimulateConfig = serde_json::from_str(
            r#"{"grid": [{"depth": "one_layer", "k1": 5, "t": 500, "target_r2": 1.5}]}"#,
        )
        .unwrap();
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("grid[0]") && e.contains("target_r2"), "{e}");
        let e = serde_json::from_str::<SimulateConfig>(r#"{"grid": [], "rep": 3}"#).unwrap_err();
        assert!(e.to_string().contains("rep"));
    }

    #[test]
    fn backtest_defaults() {
        let c: BacktestConfig = serde_json::from_str(r#"{"data": "gw.csv"}"#).unwrap();
        assert_eq!(c.methods.len(), 9);
        assert_eq!(c.windows, vec![WindowScheme::cumulative()]);
        c.validate().unwrap();
        let c: BacktestConfig =
            serde_json::from_str(r#"{"data": "gw.csv", "windows": [{"kind": "fixed_moving", "length": 10}]}"#).unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("windows[0]"));
    }

    #[test]
    fn resolves_relative_paths() {
        assert_eq!(resolve(Path::new("/a/b/c.json"), Path::new("d.csv")), PathBuf::from("/a/b/d.csv"));
        assert_eq!(resolve(Path::new("/a/b/c.json"), Path::new("/x.csv")), PathBuf::from("/x.csv"));
    }
}
