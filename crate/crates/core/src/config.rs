//! Pipeline configuration files.
//!
//! A configuration is TOML (or JSON, chosen by the `.json` extension) with
//! one table per stage. Stage-specific commands also accept a file holding
//! just their own table's fields at the top level.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::encoding::EncodingConfig;
use crate::error::{Error, Result};
use crate::model::{Arch, TrainConfig};
use crate::swim::SwimRuleConfig;
use crate::tracker::TrackerConfig;
use crate::types::Domain;

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSettings {
    /// Frame tolerances for event matching.
    pub dts: Vec<usize>,
    /// PCK radii as fractions of the person size.
    pub alphas: Vec<f64>,
    /// IoU threshold for detection AP.
    pub ap_iou: f64,
    /// Event extraction threshold on `f - b`; `2 / t_max` when absent.
    pub theta: Option<f64>,
    /// Suppression radius of event extraction.
    pub rho_sup: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            dts: vec![1, 2, 3],
            alphas: vec![0.1, 0.2],
            ap_iou: 0.5,
            theta: None,
            rho_sup: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub data: u64,
    pub train: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { data: 1, train: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub domain: Domain,
    pub tracker: TrackerConfig,
    pub swim: SwimRuleConfig,
    pub encoding: EncodingConfig,
    pub arch: Arch,
    pub train: TrainConfig,
    pub metrics: MetricSettings,
    pub seeds: Seeds,
}

const SECTIONS: [&str; 8] = [
    "domain", "tracker", "swim", "encoding", "arch", "train", "metrics", "seeds",
];

impl MetricSettings {
    pub fn validate(&self) -> Result<()> {
        if self.dts.is_empty() {
            return Err(Error::Config("metrics.dts must not be empty".into()));
        }
        if self.alphas.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::Config("metrics.alphas must be positive".into()));
        }
        if !(self.ap_iou > 0.0 && self.ap_iou <= 1.0) {
            return Err(Error::Config(format!("metrics.ap_iou {} outside (0, 1]", self.ap_iou)));
        }
        if self.rho_sup == 0 {
            return Err(Error::Config("metrics.rho_sup must be positive".into()));
        }
        Ok(())
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.tracker.validate()?;
        self.swim.validate()?;
        self.encoding.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        self.metrics.validate()?;
        if self.encoding.s != self.arch.receptive_field() {
            return Err(Error::Config(format!(
                "encoding.s = {} differs from the receptive field {} of the architecture",
                self.encoding.s,
                self.arch.receptive_field()
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let value = read_value(path)?;
        let cfg: PipelineConfig = from_value(value, path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_value(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_value(&text, path)
}

fn parse_value(text: &str, path: &Path) -> Result<serde_json::Value> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        let table: toml::Table = toml::from_str(text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(table).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn from_value<T: DeserializeOwned>(value: serde_json::Value, path: &Path) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Read one stage's settings from `path`.
///
/// A file with pipeline tables yields its `section` table, or the defaults
/// when that table is absent. Any other file is read as the section itself.
pub fn load_section<T: DeserializeOwned + Default>(path: &Path, section: &str) -> Result<T> {
    section_from_value(read_value(path)?, section, path)
}

fn section_from_value<T: DeserializeOwned + Default>(
    value: serde_json::Value,
    section: &str,
    path: &Path,
) -> Result<T> {
    let serde_json::Value::Object(mut map) = value else {
        return Err(Error::Config(format!("{}: expected a table at the top level", path.display())));
    };
    let is_pipeline = map.keys().any(|k| SECTIONS.contains(&k.as_str()));
    if is_pipeline {
        match map.remove(section) {
            Some(v) => from_value(v, path),
            None => Ok(T::default()),
        }
    } else {
        from_value(serde_json::Value::Object(map), path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::NormalizationMode;

    #[test]
    fn defaults_are_consistent() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_pipeline_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.toml");
        std::fs::write(
            &path,
            "domain = \"swim\"\n[train]\nepochs = 3\nbatch_size = 64\n[encoding]\nmode = \"global\"\n[metrics]\ndts = [1, 3]\n",
        )
        .unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.domain, Domain::Swim);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.lr, 1e-2);
        assert_eq!(cfg.encoding.mode, NormalizationMode::Global);
        assert_eq!(cfg.metrics.dts, vec![1, 3]);
        let train: TrainConfig = load_section(&path, "train").unwrap();
        assert_eq!(train.batch_size, 64);
        let tracker: TrackerConfig = load_section(&path, "tracker").unwrap();
        assert_eq!(tracker, TrackerConfig::default());
    }

    #[test]
    fn section_only_json_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("swim.json");
        std::fs::write(&path, r#"{"rho": 5, "c_head": 0.3}"#).unwrap();
        let swim: SwimRuleConfig = load_section(&path, "swim").unwrap();
        assert_eq!(swim.rho, 5);
        assert_eq!(swim.c_head, 0.3);
        assert_eq!(swim.theta_kick, 120.0);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[train]\ndropout = 1.5\n").unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
        std::fs::write(&path, "[train\n").unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
        std::fs::write(&path, "[encoding]\ns = 31\n").unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
    }
}
