//! JSON pipeline configuration.
//!
//! Every field has a default, so `{}` is a valid config. The top-level `seed`
//! overrides the seeds inside `synth` and `experiment`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use seaspeed_core::eval::ExperimentConfig;
use seaspeed_core::model::RouteConfig;
use seaspeed_core::synth::{default_route, SynthConfig, GRIDS_DIR, RECORDS_FILE};
use seaspeed_core::weather::MANIFEST_FILE;

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Holds the raw track, the weather grids and the voyage stores.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Raw track CSV; `<data_dir>/records.csv` when unset.
    pub records: Option<PathBuf>,
    /// Weather grid manifest; `<data_dir>/grids/manifest.json` when unset.
    pub grids_manifest: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            out_dir: "out".into(),
            records: None,
            grids_manifest: None,
        }
    }
}

impl Paths {
    pub fn records(&self) -> PathBuf {
        self.records.clone().unwrap_or_else(|| self.data_dir.join(RECORDS_FILE))
    }

    pub fn grids_manifest(&self) -> PathBuf {
        self.grids_manifest
            .clone()
            .unwrap_or_else(|| self.data_dir.join(GRIDS_DIR).join(MANIFEST_FILE))
    }

    /// Tagged and labeled voyages, written by `ingest`.
    pub fn voyages_dir(&self) -> PathBuf {
        self.data_dir.join("voyages")
    }

    /// Voyages with weather attached, written by `fuse`.
    pub fn fused_dir(&self) -> PathBuf {
        self.data_dir.join("fused")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out_dir.join("models")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub paths: Paths,
    pub route: RouteConfig,
    pub synth: SynthConfig,
    pub experiment: ExperimentConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA,
            seed: 42,
            paths: Paths::default(),
            route: default_route(),
            synth: SynthConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: Self =
            serde_json::from_slice(&bytes).with_context(|| format!("invalid config {}", path.display()))?;
        if cfg.schema_version != CONFIG_SCHEMA {
            bail!("{}: unsupported config schema version {}", path.display(), cfg.schema_version);
        }
        Ok(cfg)
    }

    /// Pushes the global seed into the sub-configs and validates them.
    pub fn resolve(mut self) -> anyhow::Result<Self> {
        self.synth.seed = self.seed;
        self.experiment.seed = self.seed;
        self.route.validate().context("route")?;
        self.synth.validate().context("synth")?;
        self.experiment.validate().context("experiment")?;
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let cfg: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn default_round_trips_through_json() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 1}"#).is_err());
    }

    #[test]
    fn seed_propagates() {
        let cfg = PipelineConfig {
            seed: 9,
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!((cfg.synth.seed, cfg.experiment.seed), (9, 9));
    }

    #[test]
    fn fixed_fuel_source_parses() {
        let cfg: PipelineConfig = serde_json::from_str(
            r#"{"experiment": {"fuel": {"fixed": {"c0": 5.0, "c1": 0.12, "c2": 1.5, "c3": 0.05}}}}"#,
        )
        .unwrap();
        assert!(matches!(cfg.experiment.fuel, seaspeed_core::eval::FuelSource::Fixed(_)));
    }

    #[test]
    fn derived_paths() {
        let p = Paths::default();
        assert_eq!(p.records(), PathBuf::from("data/records.csv"));
        assert_eq!(p.grids_manifest(), PathBuf::from("data/grids/manifest.json"));
    }
}
