//! Experiment configuration: one TOML document whose defaults reproduce the
//! stressed 118-bus study, with environment overrides.
//!
//! Any key can be overridden by `GRIDCFC_<SECTION>__<KEY>`, e.g.
//! `GRIDCFC_SIMULATION__N_SAMPLES=500`. Values are read as TOML literals and
//! fall back to plain strings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::SimulationConfig;
use crate::error::{Error, Result};
use crate::grid::{load_case_with, scale_case, CaseFormat, GridCase, ImportOptions, UniformLimits};
use crate::interaction::SeverityParams;
use crate::ranking::{Group, HitsOptions};
use crate::structural::StructuralOptions;

pub const ENV_PREFIX: &str = "GRIDCFC_";

/// How a case file becomes the studied case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseSettings {
    /// Multiplier on every load.
    pub load_factor: f64,
    /// Multiplier on the limits, used when no uniform limits are set.
    pub limit_factor: f64,
    /// Uniform long-term limit of lines, MW.
    pub line_limit_mw: Option<f64>,
    /// Uniform long-term limit of transformers, MW.
    pub xfmr_limit_mw: Option<f64>,
    /// Emergency-to-long-term limit ratio for cases with one rating.
    pub emergency_ratio: f64,
    pub hidden_failure_prob: f64,
    /// Long-term limit given to branches rated as unlimited, MW.
    pub unlimited_rating_mw: f64,
}

impl Default for CaseSettings {
    fn default() -> Self {
        let import = ImportOptions::default();
        CaseSettings {
            load_factor: 1.6,
            limit_factor: 1.0,
            line_limit_mw: Some(140.0),
            xfmr_limit_mw: Some(450.0),
            emergency_ratio: import.emergency_ratio,
            hidden_failure_prob: import.hidden_failure_prob,
            unlimited_rating_mw: import.unlimited_rating_mw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankingSettings {
    /// Stop once the summed max-norm change of both score vectors is below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight given to absent edges before ranking. Unset: a millionth of
    /// the largest weight.
    pub fill: Option<f64>,
}

impl Default for RankingSettings {
    fn default() -> Self {
        let h = HitsOptions::default();
        RankingSettings {
            tol: h.tol,
            max_iter: h.max_iter,
            fill: None,
        }
    }
}

impl RankingSettings {
    pub fn hits(&self) -> HitsOptions {
        HitsOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSettings {
    /// Capacity added to each upgraded branch, MW.
    pub delta_c: f64,
    /// Numbers of upgraded branches, strictly increasing.
    pub sizes: Vec<usize>,
    /// First rank of the middle group.
    pub middle_start: usize,
    /// Solve a fresh operating point for each upgraded case. Off: upgrades
    /// keep the original operating point and only relax limits.
    pub redispatch: bool,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        ValidationSettings {
            delta_c: 300.0,
            sizes: (0..=12).step_by(2).collect(),
            middle_start: 15,
            redispatch: false,
        }
    }
}

impl ValidationSettings {
    pub fn groups(&self) -> [Group; 3] {
        [Group::Top, Group::Middle { start: self.middle_start }, Group::Bottom]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: CaseSettings,
    pub simulation: SimulationConfig,
    pub severity: SeverityParams,
    pub ranking: RankingSettings,
    pub structural: StructuralOptions,
    pub validation: ValidationSettings,
}

impl ExperimentConfig {
    /// Parse a TOML document, then apply overrides from `env`.
    pub fn from_toml<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut overrides: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        overrides.sort();
        for (key, value) in overrides {
            let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
            if path.len() < 2 {
                continue;
            }
            set_path(&mut doc, &path, parse_value(&value))?;
        }
        let cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load from a file, or defaults when `path` is `None`, with process
    /// environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml(&text, std::env::vars())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.case;
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(c.load_factor) || !positive(c.limit_factor) || !positive(c.unlimited_rating_mw) {
            return Err(Error::Config("case scale factors and ratings must be positive".into()));
        }
        if c.line_limit_mw.is_some() != c.xfmr_limit_mw.is_some() {
            return Err(Error::Config("set both line_limit_mw and xfmr_limit_mw, or neither".into()));
        }
        if !(c.emergency_ratio >= 1.0) {
            return Err(Error::Config("emergency_ratio must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&c.hidden_failure_prob) {
            return Err(Error::Config("hidden_failure_prob must lie in [0, 1]".into()));
        }
        self.severity.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.ranking.tol > 0.0) || self.ranking.max_iter == 0 {
            return Err(Error::Config("ranking tolerance and iteration cap must be positive".into()));
        }
        if self.ranking.fill.is_some_and(|f| !positive(f)) {
            return Err(Error::Config("ranking fill must be positive".into()));
        }
        let v = &self.validation;
        if !(v.delta_c >= 0.0 && v.delta_c.is_finite()) {
            return Err(Error::Config("delta_c must be nonnegative".into()));
        }
        if v.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("validation sizes must be strictly increasing".into()));
        }
        if v.middle_start == 0 {
            return Err(Error::Config("middle_start is a 1-based rank".into()));
        }
        Ok(())
    }

    pub fn import_options(&self) -> ImportOptions {
        ImportOptions {
            unlimited_rating_mw: self.case.unlimited_rating_mw,
            emergency_ratio: self.case.emergency_ratio,
            hidden_failure_prob: self.case.hidden_failure_prob,
            ..ImportOptions::default()
        }
    }

    /// Read a case file and apply the load and limit settings.
    pub fn prepare_case(&self, path: &Path) -> Result<GridCase> {
        let raw = load_case_with(path, CaseFormat::from_path(path), &self.import_options())?;
        let uniform = match (self.case.line_limit_mw, self.case.xfmr_limit_mw) {
            (Some(line_mw), Some(xfmr_mw)) => Some(UniformLimits { line_mw, xfmr_mw }),
            _ => None,
        };
        scale_case(&raw, self.case.load_factor, self.case.limit_factor, uniform)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(doc: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut table = doc;
    for p in parents {
        let entry = table.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path {} crosses a non-table value", path.join("."))))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn empty_document_gives_study_defaults() {
        let c = ExperimentConfig::from_toml("", env(&[])).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.case.load_factor, 1.6);
        assert_eq!((c.case.line_limit_mw, c.case.xfmr_limit_mw), (Some(140.0), Some(450.0)));
        assert_eq!((c.severity.k1, c.severity.k2), (6.0, 3.0));
        assert_eq!(c.case.hidden_failure_prob, 0.01);
        assert_eq!(c.ranking.hits(), HitsOptions::default());
        assert_eq!(c.validation.delta_c, 300.0);
        assert_eq!(c.validation.sizes, vec![0, 2, 4, 6, 8, 10, 12]);
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = ExperimentConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text, env(&[])).unwrap(), c);
    }

    #[test]
    fn file_values_and_env_overrides() {
        let text = "[simulation]\nn_samples = 50\nseed = 9\n[severity]\nk2 = 0.0\n";
        let c = ExperimentConfig::from_toml(
            text,
            env(&[
                ("GRIDCFC_SIMULATION__SEED", "11"),
                ("GRIDCFC_VALIDATION__SIZES", "[0, 4]"),
                ("GRIDCFC_RANKING__FILL", "1e-9"),
                ("GRIDCFC_CASE__LINE_LIMIT_MW", "150"),
                ("HOME", "/root"),
            ]),
        )
        .unwrap();
        assert_eq!(c.simulation.n_samples, 50);
        assert_eq!(c.simulation.seed, 11);
        assert_eq!(c.severity.k2, 0.0);
        assert_eq!(c.validation.sizes, vec![0, 4]);
        assert_eq!(c.ranking.fill, Some(1e-9));
        assert_eq!(c.case.line_limit_mw, Some(150.0));
    }

    #[test]
    fn bad_documents_are_rejected() {
        for text in [
            "[simulation]\nbogus = 1\n",
            "[case]\nload_factor = -1.0\n",
            "[validation]\nsizes = [4, 2]\n",
            "[severity]\nk1 = -1.0\n",
            "[ranking]\nepsilon = 1.0\n",
            "[simulation.pf]\ntypo = 1\n",
            "[case]\nline_limit_mw = 100.0\nxfmr_limit_mw = 100.0\nemergency_ratio = 0.5\n",
            "not toml",
        ] {
            assert!(ExperimentConfig::from_toml(text, env(&[])).is_err(), "{text}");
        }
        assert!(ExperimentConfig::from_toml("", env(&[("GRIDCFC_SIMULATION__SEED", "\"x\"")])).is_err());
    }

    #[test]
    fn study_case_preparation() {
        let path = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/cases/case118.m"));
        let case = ExperimentConfig::default().prepare_case(path).unwrap();
        assert!((case.total_load() - 6787.2).abs() < 1e-9);
        assert_eq!(case.branches()[0].f_lim1, 140.0);
    }
}
