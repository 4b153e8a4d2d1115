//! Run configuration: TOML file, then command-line overrides.

use std::path::Path;

use anyhow::Context;
use drm_core::domain::DomainSelection;
use drm_core::iteration::IterationConfig;
use drm_core::pipeline::FitConfig;
use drm_core::simulate::FrameBounds;
use drm_core::DrmError;
use serde::{Deserialize, Serialize};

/// The documented default configuration.
#[cfg(test)]
const DEFAULT_TOML: &str = include_str!("../default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub n_exc: usize,
    /// 1: every cohort segment, 2: only segments with at least two data cells.
    pub domain: u8,
    pub weight_by_count: bool,
    pub sex: Option<String>,
    pub frame: Option<FrameBounds>,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self { n_exc: 5, domain: 1, weight_by_count: false, sex: None, frame: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub delta_age: usize,
    pub delta_year: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self { delta_age: 5, delta_year: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Birth year of the tracked cohort; the best-covered cohort when absent.
    pub cohort: Option<i64>,
    /// Also write the stacked design matrix as triplets.
    pub dump_system: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub ingest: IngestSection,
    pub iteration: IterationConfig,
    pub clusters: ClusterSection,
    pub output: OutputSection,
    /// `[r_v, r_u]` pairs fitted by `fit --batch`.
    pub batch: Vec<[f64; 2]>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            ingest: IngestSection::default(),
            iteration: IterationConfig::default(),
            clusters: ClusterSection::default(),
            output: OutputSection::default(),
            batch: vec![[0.7, 0.7], [0.7, 0.8], [0.7, 0.9], [0.7, 0.95]],
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.iteration.validate()?;
        DomainSelection::from_code(self.ingest.domain)?;
        if self.clusters.delta_age == 0 || self.clusters.delta_year == 0 {
            return Err(DrmError::InvalidParameter { name: "clusters", reason: "block sizes must be at least 1".into() }.into());
        }
        for &[r_v, r_u] in &self.batch {
            IterationConfig { r_u, r_v, ..self.iteration }.validate()?;
        }
        Ok(())
    }

    pub fn fit_config(&self) -> anyhow::Result<FitConfig> {
        Ok(FitConfig {
            n_exc: self.ingest.n_exc,
            domain: DomainSelection::from_code(self.ingest.domain)?,
            weight_by_count: self.ingest.weight_by_count,
            sex: self.ingest.sex.clone(),
            frame: self.ingest.frame,
            iteration: self.iteration,
            delta_age: self.clusters.delta_age,
            delta_year: self.clusters.delta_year,
        })
    }

    /// Canonical serialization used for the run digest.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults_match_code() {
        let parsed: Config = toml::from_str(DEFAULT_TOML).unwrap();
        assert_eq!(parsed, Config::default());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: Config = toml::from_str("[iteration]\nr_u = 0.8\n").unwrap();
        assert_eq!(cfg.iteration.r_u, 0.8);
        assert_eq!(cfg.iteration.r_v, 0.7);
        assert_eq!(cfg.clusters.delta_age, 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("[iteration]\nru = 0.8\n").is_err());
        assert!(toml::from_str::<Config>("colour = 1\n").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = Config::default();
        assert!(cfg.validate().is_ok());
        cfg.ingest.domain = 3;
        assert!(cfg.validate().is_err());
        let cfg = Config { batch: vec![[0.7, 1.2]], ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
