//! Engine-wide configuration: one JSON document with a section per module,
//! strict about unknown keys, revalidating every module invariant on load.

use serde::{Deserialize, Serialize};

use crate::control::GridSpec;
use crate::demand::{DemandModel, RiskPrice};
use crate::error::{EngineError, Result};
use crate::market::{ProducerSpec, SpotMap};
use crate::pricing::{default_mc_paths, default_quad_order, FuturesModel};
use crate::sim::FuturesUpdate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingSection {
    pub maturity: f64,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
    #[serde(default = "default_mc_paths")]
    pub mc_paths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub paths: usize,
    pub steps: usize,
    #[serde(default)]
    pub futures_update: FuturesUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub demand: DemandModel,
    pub risk: RiskPrice,
    pub spot: SpotMap,
    pub producer: ProducerSpec,
    pub pricing: PricingSection,
    pub grid: GridSpec,
    pub simulation: SimSection,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: EngineConfig =
            serde_json::from_str(text).map_err(|e| EngineError::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses the document, applies `section.key=value` overrides onto the
    /// JSON tree (the key must already exist), then deserializes strictly.
    pub fn from_json_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut tree: serde_json::Value =
            serde_json::from_str(text).map_err(|e| EngineError::Format(format!("config: {e}")))?;
        for (key, value) in overrides {
            apply_override(&mut tree, key, value)?;
        }
        let cfg: EngineConfig = serde_json::from_value(tree)
            .map_err(|e| EngineError::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.demand.validate()?;
        self.spot.validate()?;
        self.producer.validate()?;
        let fm = self.futures_model();
        fm.validate()?;
        self.grid.validate(&fm, &self.producer)?;
        if self.simulation.paths == 0 || self.simulation.steps < 2 {
            return Err(EngineError::InvalidParameter(
                "simulation needs paths >= 1 and steps >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        self.demand.warnings()
    }

    pub fn futures_model(&self) -> FuturesModel {
        FuturesModel {
            demand: self.demand,
            risk: self.risk.clone(),
            spot: self.spot,
            maturity: self.pricing.maturity,
            quad_order: self.pricing.quad_order,
            mc_paths: self.pricing.mc_paths,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Sets an existing dotted path in the JSON tree. The replacement value is
/// parsed as JSON when possible and falls back to a plain string.
fn apply_override(tree: &mut serde_json::Value, key: &str, value: &str) -> Result<()> {
    let parsed: serde_json::Value = serde_json::from_str(value)
        .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
    let mut cursor = tree;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.is_empty() {
        return Err(EngineError::Format("empty override key".into()));
    }
    for part in &parts[..parts.len() - 1] {
        cursor = cursor.get_mut(part).ok_or_else(|| {
            EngineError::Format(format!("unknown config section '{part}' in '{key}'"))
        })?;
    }
    let last = parts[parts.len() - 1];
    match cursor.get_mut(last) {
        Some(slot) => {
            *slot = parsed;
            Ok(())
        }
        None => Err(EngineError::Format(format!(
            "unknown config key '{last}' in '{key}'"
        ))),
    }
}
