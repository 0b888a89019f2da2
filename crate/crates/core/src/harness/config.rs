//! Run configuration and the named parameter presets.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::continuation::MarginSettings;
use crate::error::{Error, Result};
use crate::models::{CoordinateMetric, Duffing, Dynamics, SystemModel, TwoMode, UncertaintyKind, TWO_MODE_PARAMS};

pub const PRESETS: [&str; 5] = ["two_mode_4a", "two_mode_4b", "two_mode_4c", "two_mode_4d", "duffing_s2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `two_mode` or `duffing`.
    pub system: String,
    /// Reference value of every parameter of the system, including the
    /// bifurcation parameter (its value is only used outside continuation).
    pub parameters: BTreeMap<String, f64>,
    pub lambda: String,
    /// State coordinate used as the metric, e.g. `q1`.
    pub metric: String,
    /// Parameters carrying proportional uncertainty, in order.
    pub uncertain: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub n_boundary: usize,
    pub n_radial: usize,
    pub bin_width: f64,
    /// Fraction of failed sample curves above which validation fails.
    pub max_failure_fraction: f64,
    /// Relative excess of the samples over the margins counted as a violation.
    pub violation_tol: f64,
    /// Relative gap between margins and samples tolerated away from folds.
    pub slack_tol: f64,
    /// Half-width of the window around margin folds excluded from the slack test.
    pub fold_window: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            n_boundary: 72,
            n_radial: 3,
            bin_width: 0.002,
            max_failure_fraction: 0.05,
            violation_tol: 1e-3,
            slack_tol: 0.02,
            fold_window: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsolaSettings {
    /// Radii probed before bisection.
    pub scan: Vec<f64>,
    pub bracket: (f64, f64),
    pub tolerance: f64,
}

impl Default for IsolaSettings {
    fn default() -> Self {
        Self {
            scan: Vec::new(),
            bracket: (0.07, 0.10),
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub model: ModelConfig,
    /// Uncertainty radius.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Additional radii for multi-level runs.
    #[serde(default)]
    pub radii: Vec<f64>,
    #[serde(default)]
    pub margins: MarginSettings,
    #[serde(default)]
    pub grid: GridSettings,
    #[serde(default)]
    pub isola: IsolaSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_radius() -> f64 {
    0.1
}

fn default_output_dir() -> String {
    "runs".into()
}

fn two_mode_parameters(values: [f64; 13]) -> BTreeMap<String, f64> {
    let mut map: BTreeMap<String, f64> = TWO_MODE_PARAMS[..13]
        .iter()
        .zip(values)
        .map(|(n, v)| (n.to_string(), v))
        .collect();
    map.insert("omega".into(), 1.0);
    map
}

fn two_mode(metric: &str, uncertain: [&str; 2], values: [f64; 13]) -> ModelConfig {
    ModelConfig {
        system: "two_mode".into(),
        parameters: two_mode_parameters(values),
        lambda: "omega".into(),
        metric: metric.into(),
        uncertain: uncertain.iter().map(|s| s.to_string()).collect(),
    }
}

impl RunConfig {
    /// Named preset with its tuned range, seeds and settings.
    pub fn preset(name: &str) -> Result<Self> {
        let mut margins = MarginSettings::default();
        let mut isola = IsolaSettings::default();
        let mut radii = Vec::new();
        let model = match name {
            "two_mode_4a" => {
                margins.lambda_range = (0.5, 2.2);
                margins.seeds = vec![0.7, 1.0, 1.4, 1.8];
                two_mode(
                    "q1",
                    ["k1", "F1"],
                    [1.0, 1.0, 0.05, 0.005, 0.05, 1.0, 1.0, 1.0, 1.0, 0.5, 1.0, 0.03, 0.03],
                )
            }
            "two_mode_4b" => {
                margins.lambda_range = (0.5, 2.0);
                margins.seeds = vec![0.7, 1.0, 1.4, 1.8];
                radii = vec![0.025, 0.05, 0.075, 0.1];
                two_mode(
                    "q2",
                    ["c1", "F1"],
                    [1.0, 1.0, 0.08, 0.02, 0.05, 1.0, 0.2, 0.8, 1.0, 0.02, 2.0, 0.1, -0.03],
                )
            }
            "two_mode_4c" => {
                margins.lambda_range = (0.9, 1.2);
                margins.seeds = vec![0.95, 1.05, 1.15];
                two_mode(
                    "q2",
                    ["F1", "F2"],
                    [1.0, 1.0, 0.008, 0.001, 0.008, 1.0, 0.04, 1.0, 0.5, 0.01, 0.5, -0.005, 0.0052],
                )
            }
            "two_mode_4d" => {
                margins.lambda_range = (0.5, 2.5);
                margins.seeds = vec![0.95, 1.0, 1.05, 1.6];
                margins.continuation.state_scale = 1.0;
                radii = vec![0.07, 0.1];
                isola.scan = vec![0.07, 0.1];
                two_mode(
                    "q2",
                    ["c1", "F1"],
                    [1.0, 0.05, 0.015, 0.015, 0.0, 1.0, 0.0454, 0.0, 1.0, 0.0042, 0.0, 0.2, 0.0],
                )
            }
            "duffing_s2" => {
                margins.lambda_range = (0.3, 2.0);
                margins.seeds = vec![0.5, 1.0, 1.5];
                let parameters = [("m", 1.0), ("c", 0.1), ("k", 1.0), ("alpha", 1.0), ("F", 0.2), ("omega", 1.0)]
                    .iter()
                    .map(|(n, v)| (n.to_string(), *v))
                    .collect();
                ModelConfig {
                    system: "duffing".into(),
                    parameters,
                    lambda: "omega".into(),
                    metric: "q".into(),
                    uncertain: vec!["c".into(), "F".into()],
                }
            }
            other => return Err(Error::Config(format!("unknown preset `{other}`"))),
        };
        Ok(Self {
            preset: Some(name.to_string()),
            model,
            radius: default_radius(),
            radii,
            margins,
            grid: GridSettings::default(),
            isola,
            output_dir: default_output_dir(),
        })
    }

    /// Parse a JSON document. A `preset` key supplies defaults that the
    /// remaining keys override field by field.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let Value::Object(map) = &user else {
            return Err(Error::Config("configuration must be a JSON object".into()));
        };
        let merged = match map.get("preset") {
            Some(Value::String(name)) => {
                let mut base = serde_json::to_value(Self::preset(name)?)?;
                merge(&mut base, user);
                base
            }
            Some(_) => return Err(Error::Config("`preset` must be a string".into())),
            None => user,
        };
        let config: Self = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("invalid radius {}", self.radius)));
        }
        if self.radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config("radii must be positive".into()));
        }
        if !(self.grid.n_boundary > 0 && self.grid.n_radial > 0 && self.grid.bin_width > 0.0) {
            return Err(Error::Config("invalid grid settings".into()));
        }
        let (lo, hi) = self.isola.bracket;
        if !(lo > 0.0 && hi > lo && self.isola.tolerance > 0.0) {
            return Err(Error::Config("invalid isola bracket".into()));
        }
        self.margins.validate()?;
        self.system_model().map(|_| ())
    }

    pub fn name(&self) -> String {
        self.preset.clone().unwrap_or_else(|| self.model.system.clone())
    }

    pub fn system_model(&self) -> Result<SystemModel> {
        let dynamics: Arc<dyn Dynamics> = match self.model.system.as_str() {
            "two_mode" => Arc::new(TwoMode),
            "duffing" => Arc::new(Duffing),
            other => return Err(Error::Config(format!("unknown system `{other}`"))),
        };
        let names = dynamics.param_names();
        if let Some(extra) = self.model.parameters.keys().find(|k| !names.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown parameter `{extra}` for {}", self.model.system)));
        }
        let values = names
            .iter()
            .map(|n| {
                self.model
                    .parameters
                    .get(*n)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("missing parameter `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let index = state_index(&self.model.system, &self.model.metric)?;
        let metric = Arc::new(CoordinateMetric::new(dynamics.as_ref(), index, self.model.metric.clone())?);
        let uncertain: Vec<(&str, UncertaintyKind)> = self
            .model
            .uncertain
            .iter()
            .map(|n| (n.as_str(), UncertaintyKind::Proportional))
            .collect();
        SystemModel::new(dynamics, values, &self.model.lambda, metric, &uncertain)
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Radii of a multi-level run: `radii` when given, else `radius`.
    pub fn levels(&self) -> Vec<f64> {
        if self.radii.is_empty() {
            vec![self.radius]
        } else {
            self.radii.clone()
        }
    }
}

fn state_index(system: &str, name: &str) -> Result<usize> {
    let names: &[&str] = match system {
        "two_mode" => &["q1", "q1_dot", "q2", "q2_dot"],
        _ => &["q", "q_dot"],
    };
    names
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown metric `{name}` for {system}")))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds() {
        for name in PRESETS {
            let c = RunConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(c.name(), name);
        }
    }

    #[test]
    fn override_merges_into_preset() {
        let c = RunConfig::from_json(
            r#"{"preset": "two_mode_4a", "radius": 0.05, "margins": {"seeds": [1.0]}, "model": {"parameters": {"c1": 0.06}}}"#,
        )
        .unwrap();
        assert_eq!(c.radius, 0.05);
        assert_eq!(c.margins.seeds, vec![1.0]);
        assert_eq!(c.margins.lambda_range, (0.5, 2.2));
        assert_eq!(c.model.parameters["c1"], 0.06);
        assert_eq!(c.model.parameters["k1"], 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"preset": "two_mode_4a", "radious": 0.1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"preset": "two_mode_4a", "margins": {"sedes": [1.0]}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"preset": "nope"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"preset": "two_mode_4a", "model": {"metric": "q3"}}"#).is_err());
    }

    #[test]
    fn round_trip_through_json() {
        let c = RunConfig::preset("two_mode_4d").unwrap();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(c, back);
    }
}
