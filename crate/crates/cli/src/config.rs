use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use freqrobust::bench::{ReportFormat, DEFAULT_SLACK};
use freqrobust::dataio::{AugmentPolicy, GridSpec, NormStats};
use freqrobust::nnet::TrainConfig;

/// An invalid configuration; the binary exits with status 2 on it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the CIFAR-10 binary batches.
    pub cifar_dir: PathBuf,
    /// Use only the first `train_limit` training images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    /// Use only the first `test_limit` test images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub formats: Vec<ReportFormat>,
    /// Trend-check slack in accuracy points.
    pub slack: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            formats: vec![ReportFormat::Csv, ReportFormat::Markdown],
            slack: DEFAULT_SLACK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub augment: AugmentPolicy,
    #[serde(default)]
    pub train: TrainConfig,
    /// Fixed normalization; computed from the training subset when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormStats>,
    #[serde(default)]
    pub report: ReportConfig,
}

impl ExperimentConfig {
    /// Parses TOML; relative paths are taken relative to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        if cfg.data.cifar_dir.is_relative() {
            cfg.data.cifar_dir = base.join(&cfg.data.cifar_dir);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| invalid(format!("{}: {}", path.display(), e.0)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is representable as TOML")
    }

    /// Field-level checks. `needs_data` also requires the dataset directory
    /// to exist.
    pub fn validate(&self, needs_data: bool) -> Result<(), ConfigError> {
        let field = |name: &str, e: freqrobust::Error| invalid(format!("{name}: {e}"));
        self.grid.validate().map_err(|e| field("grid", e))?;
        self.augment.validate().map_err(|e| field("augment", e))?;
        self.train.validate().map_err(|e| field("train", e))?;
        if let Some(norm) = &self.norm {
            norm.validate(3).map_err(|e| field("norm", e))?;
        }
        if self.data.train_limit.is_some_and(|n| n < 2) {
            return Err(invalid("data.train_limit must be at least 2"));
        }
        if self.data.test_limit == Some(0) {
            return Err(invalid("data.test_limit must be positive"));
        }
        if !(self.report.slack.is_finite() && self.report.slack >= 0.0) {
            return Err(invalid("report.slack must be finite and non-negative"));
        }
        if self.report.formats.is_empty() {
            return Err(invalid("report.formats must name at least one format"));
        }
        if needs_data && !self.data.cifar_dir.is_dir() {
            return Err(invalid(format!(
                "data.cifar_dir {} is not a directory",
                self.data.cifar_dir.display()
            )));
        }
        Ok(())
    }

    pub fn testsets_dir(&self) -> PathBuf {
        self.out_dir.join("testsets")
    }

    pub fn augment_dir(&self) -> PathBuf {
        self.out_dir.join("augment")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.out_dir.join("runs")
    }

    /// `baseline` or `stochastic`, following `train.stochastic_augment`.
    pub fn run_name(&self) -> &'static str {
        if self.train.stochastic_augment {
            "stochastic"
        } else {
            "baseline"
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs_dir().join(self.run_name())
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.join("report")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "out_dir = \"out\"\n[data]\ncifar_dir = \"data\"\n";

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = ExperimentConfig::parse(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(cfg.out_dir, Path::new("/base/out"));
        assert_eq!(cfg.data.cifar_dir, Path::new("/base/data"));
        assert_eq!(cfg.grid, GridSpec::default());
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.run_name(), "baseline");
        cfg.validate(false).unwrap();
        assert!(cfg.validate(true).is_err());
    }

    #[test]
    fn round_trip_is_stable() {
        let text = format!("{MINIMAL}[train]\nepochs = 3\nlr_milestones = [1]\n[norm]\nmean = [0.5, 0.5, 0.5]\nstd = [0.25, 0.25, 0.25]\n");
        let cfg = ExperimentConfig::parse(&text, Path::new("/b")).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), cfg.to_toml());
    }

    #[test]
    fn unknown_and_bad_fields_are_rejected() {
        let unknown = format!("{MINIMAL}[train]\nepoch = 3\n");
        let e = ExperimentConfig::parse(&unknown, Path::new("/")).unwrap_err();
        assert!(e.0.contains("epoch"), "{e}");
        let typo_top = format!("outdir = 1\n{MINIMAL}");
        assert!(ExperimentConfig::parse(&typo_top, Path::new("/")).is_err());
        let bad = format!("{MINIMAL}[train]\nbatch_size = 0\n");
        let cfg = ExperimentConfig::parse(&bad, Path::new("/")).unwrap();
        let e = cfg.validate(false).unwrap_err();
        assert!(e.0.starts_with("train:"), "{e}");
        let bad_grid =
            format!("{MINIMAL}[grid]\nkinds = [\"HighPass\"]\nsigmas = [-1.0]\nwidths = [3]\n");
        let cfg = ExperimentConfig::parse(&bad_grid, Path::new("/")).unwrap();
        assert!(cfg.validate(false).unwrap_err().0.starts_with("grid:"));
    }
}
