use std::path::Path;

use contrax_core::{Activation, FeedforwardSpec, Vector};
use serde::{Deserialize, Serialize};

use super::model::MatrixRecord;
use crate::error::{read_file, IoError, Result};

/// One affine layer `z ↦ W z + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub weight: MatrixRecord,
    pub bias: Vec<f64>,
}

/// Feedforward network: hidden layers followed by a linear readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub activation: String,
    pub layers: Vec<LayerRecord>,
}

impl WeightsFile {
    pub fn to_spec(&self) -> Result<FeedforwardSpec> {
        let act: Activation = self
            .activation
            .parse()
            .map_err(|e: contrax_core::Error| IoError::schema(e.to_string()))?;
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let w = l.weight.to_mat(&format!("layer {i} weight"))?;
                Ok((w, Vector::from_vec(l.bias.clone())))
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = FeedforwardSpec { layers, act };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn parse_weights(text: &str) -> Result<FeedforwardSpec> {
    let file: WeightsFile = serde_json::from_str(text).map_err(|e| IoError::schema(e.to_string()))?;
    file.to_spec()
}

pub fn load_weights(path: &Path) -> Result<FeedforwardSpec> {
    parse_weights(&read_file(path)?)
}
