use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degradation::DegradationConfig;
use crate::denoiser::DenoiserSettings;
use crate::error::{Error, Result};
use crate::rgs::RgsConfig;
use crate::schedule::{NoiseSchedule, SigmaRule};
use crate::ucs::UcsConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma_rule: SigmaRule,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sigma_rule: SigmaRule::Posterior,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end, self.sigma_rule)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_cases: usize,
    pub image_size: usize,
    pub n_ellipses: usize,
    pub phantom_seed: u64,
    /// Phantoms used to fit learned denoisers; drawn from a seed disjoint
    /// from the evaluation corpus.
    pub train_cases: usize,
    /// Label written to the `contrast` CSV column.
    pub contrast: String,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_cases: 20,
            image_size: 32,
            n_ellipses: 8,
            phantom_seed: 2024,
            train_cases: 32,
            contrast: "t1w".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write every prediction as a volume file and PGM preview.
    pub save_volumes: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("rediff-out"),
            save_volumes: false,
        }
    }
}

/// Everything that determines a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schedule: ScheduleConfig,
    pub degradation: DegradationConfig,
    pub denoiser: DenoiserSettings,
    pub rgs: RgsConfig,
    pub ucs: UcsConfig,
    pub corpus: CorpusConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// The effective config with every field spelled out.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        self.degradation.validate()?;
        self.rgs.validate()?;
        self.ucs.validate()?;
        if self.corpus.image_size < super::phantom::MIN_SIZE {
            return Err(Error::param(
                "image_size",
                format!("must be >= {}", super::phantom::MIN_SIZE),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rgs::ProbeScale;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(
            ExperimentConfig::from_toml_str("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn round_trips_through_text() {
        let mut cfg = ExperimentConfig::default();
        cfg.rgs.probe_std = ProbeScale::Absolute(0.05);
        cfg.ucs.k = 3;
        cfg.ucs.m = 2;
        cfg.denoiser.weights = Some("w.bin".into());
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        let cfg = ExperimentConfig::default();
        assert_eq!(
            ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap(),
            cfg
        );
    }

    #[test]
    fn partial_sections_and_unknown_keys() {
        let cfg = ExperimentConfig::from_toml_str(
            "[rgs]\ngamma = 0.5\nprobe_std = \"adaptive\"\n[ucs]\nk = 4\nm = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.rgs.gamma, 0.5);
        assert_eq!(cfg.rgs.n_probes, RgsConfig::default().n_probes);
        assert_eq!(cfg.ucs.k, 4);
        assert!(matches!(
            ExperimentConfig::from_toml_str("[rgs]\ngama = 0.5\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str("[bogus]\n"),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_toml_str("[ucs]\nk = 2\nm = 5\n").is_err());
    }
}
