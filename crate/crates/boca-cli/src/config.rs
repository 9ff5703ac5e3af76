//! Run configuration: one JSON document carrying the model fields and
//! sampler settings, with command-line flags taking precedence.

use std::path::Path;

use anyhow::{Context as _, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_mc: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_bi: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let cfg: RunConfig = boca::io::read_json(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Ok(cfg)
            }
        }
    }

    /// Assemble a model config for known data dimensions, applying any
    /// overrides from the file.
    pub fn model_config(&self, m: usize, n: usize, t: usize) -> Result<boca::model::ModelConfig> {
        let mut cfg = boca::model::ModelConfig::new(m, n, t)?;
        if let Some(nu) = self.nu {
            cfg.nu = nu;
        }
        if let Some(a0) = self.alpha0 {
            cfg.alpha0 = a0;
        }
        if let Some(a1) = self.alpha1 {
            cfg.alpha1 = a1;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
