//! Run configuration: one JSON document, overridden field by field by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use rlvr_core::client::EndpointConfig;
use rlvr_core::filter::SelectionSpec;
use rlvr_core::{GrpoConfig, RewardWeights};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exit::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_results_dir")]
    pub results_dir: PathBuf,
    #[serde(default = "default_checkpoint")]
    pub checkpoint: PathBuf,
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}
fn default_results_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_checkpoint() -> PathBuf {
    PathBuf::from("checkpoint.json")
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: None,
            cache_dir: default_cache_dir(),
            results_dir: default_results_dir(),
            checkpoint: default_checkpoint(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Optional as a whole because only `train` needs it; `total_steps` may then come from `--steps`.
    #[serde(default)]
    pub grpo: Option<GrpoConfig>,
    #[serde(default)]
    pub rewards: RewardWeights,
    #[serde(default)]
    pub selection: SelectionSpec,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub run_id: Option<String>,
}

impl RunConfig {
    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| rlvr_core::Error::Parse {
                location: path.display().to_string(),
                detail: e.to_string(),
            })?;
        Ok(config)
    }

    /// Applies `--seed` to every seeded component.
    pub fn override_seed(&mut self, seed: Option<u64>) {
        if let Some(seed) = seed {
            self.selection.seed = seed;
            if let Some(grpo) = self.grpo.as_mut() {
                grpo.seed = seed;
            }
        }
    }

    /// First 8 hex digits of the SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter().take(4).map(|b| format!("{b:02x}")).collect()
    }

    /// Explicit run id, or a UTC timestamp plus the config digest.
    pub fn resolve_run_id(&mut self, flag: Option<String>) -> anyhow::Result<String> {
        if let Some(id) = flag {
            self.run_id = Some(id);
        }
        let id = match &self.run_id {
            Some(id) => id.clone(),
            None => format!(
                "{}-{}",
                chrono::Utc::now().format("%Y%m%dT%H%M%SZ"),
                self.digest()
            ),
        };
        let safe = !id.is_empty()
            && id != "."
            && id != ".."
            && id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if !safe {
            return Err(
                CliError::usage(format!("run_id {id:?} is not a safe directory name")).into(),
            );
        }
        self.run_id = Some(id.clone());
        Ok(id)
    }

    /// Creates and returns `results_dir/run_id`.
    pub fn run_dir(&self) -> anyhow::Result<PathBuf> {
        let id = self.run_id.as_deref().expect("run id resolved before use");
        let dir = self.paths.results_dir.join(id);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}
