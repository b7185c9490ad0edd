use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{GatewayError, HttpProvider, Price, Provider, RetryPolicy, ScriptedProvider};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Http,
    Scripted,
}

/// One `[models."<id>"]` table of the provider config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Model name sent upstream; defaults to the table key.
    #[serde(default)]
    pub remote_model: Option<String>,
    #[serde(default)]
    pub input_price_per_1k: f64,
    #[serde(default)]
    pub output_price_per_1k: f64,
    /// Reasoning models take `reasoning_effort` instead of a temperature.
    #[serde(default)]
    pub reasoning: bool,
    /// Reply script for `kind = "scripted"`, relative to the config file.
    #[serde(default)]
    pub script: Option<PathBuf>,
}

impl ModelEntry {
    pub fn price(&self) -> Price {
        Price {
            input_per_1k: self.input_price_per_1k,
            output_per_1k: self.output_price_per_1k,
        }
    }

    pub(super) fn build_provider(
        &self,
        model_id: &str,
        retry: &RetryPolicy,
    ) -> Result<Arc<dyn Provider>, GatewayError> {
        match self.kind {
            ProviderKind::Http => {
                let endpoint = self.endpoint.clone().ok_or_else(|| {
                    GatewayError::Config(format!("model {model_id:?} has no endpoint"))
                })?;
                let remote = self
                    .remote_model
                    .clone()
                    .unwrap_or_else(|| model_id.to_string());
                let provider = HttpProvider::new(
                    endpoint,
                    remote,
                    self.api_key_env.clone(),
                    Duration::from_secs(retry.timeout_secs),
                )
                .map_err(GatewayError::Config)?;
                Ok(Arc::new(provider))
            }
            ProviderKind::Scripted => {
                let script = self.script.as_ref().ok_or_else(|| {
                    GatewayError::Config(format!("scripted model {model_id:?} has no script"))
                })?;
                Ok(Arc::new(
                    ScriptedProvider::from_file(script).map_err(GatewayError::Config)?,
                ))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(default)]
    pub models: BTreeMap<String, ModelEntry>,
}

/// Parses a TOML provider config. Relative script paths resolve against the
/// config file's directory.
pub fn load_provider_config(path: &Path) -> Result<ProviderConfig, GatewayError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
    let mut config: ProviderConfig = toml::from_str(&text)
        .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for entry in config.models.values_mut() {
        if let Some(script) = &entry.script {
            if script.is_relative() {
                entry.script = Some(base.join(script));
            }
        }
    }
    Ok(config)
}
