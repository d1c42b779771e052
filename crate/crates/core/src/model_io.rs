//! The model file: a versioned JSON document with the feature map, the
//! network parameters and the training configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_codec::BinFeatureMap;
use crate::network::DrNet;
use crate::ruleset::{self, Extraction};
use crate::trainer::TrainConfig;

const MODEL_FORMAT: &str = "drnet-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub features: BinFeatureMap,
    pub net: DrNet,
}

impl TrainedModel {
    pub fn new(config: TrainConfig, features: BinFeatureMap, net: DrNet) -> Result<Self> {
        if features.len() != net.d {
            return Err(Error::Dimension { what: "feature map", expected: net.d, got: features.len() });
        }
        Ok(TrainedModel { format: MODEL_FORMAT.to_owned(), version: MODEL_VERSION, config, features, net })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let format = value.get("format").and_then(|f| f.as_str()).unwrap_or_default();
        if format != MODEL_FORMAT {
            return Err(Error::Malformed { what: "model file", reason: format!("unknown format tag `{format}`") });
        }
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != MODEL_VERSION {
            return Err(Error::Version { what: "model file", found: version, expected: MODEL_VERSION });
        }
        let model: TrainedModel = serde_json::from_value(value)?;
        let n = &model.net;
        let net = DrNet::from_parts(
            n.m,
            n.d,
            n.rule_weights.clone(),
            n.rule_gates.clone(),
            n.or_gates.clone(),
            n.epsilon,
        )?;
        TrainedModel::new(model.config, model.features, net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn extract(&self) -> Result<Extraction> {
        ruleset::extract(&self.net, &self.features)
    }
}
