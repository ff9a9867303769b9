//! Service configuration: a TOML file plus a few environment overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sqlcritic_core::exec::{ExecConfig, VerifyMode};
use sqlcritic_core::grpo::GrpoConfig;
use sqlcritic_core::judge::{JudgeConfig, StubMode};
use sqlcritic_core::par::Strategy;
use sqlcritic_core::synthesis::SynthesisConfig;
use sqlcritic_core::RewardMode;

pub const ENV_DB_ROOT: &str = "RUCO_DB_ROOT";
pub const ENV_JUDGE_ENDPOINT: &str = "RUCO_JUDGE_ENDPOINT";
pub const ENV_JUDGE_KEY: &str = "RUCO_JUDGE_KEY";
pub const ENV_MAX_BATCH: &str = "RUCO_MAX_BATCH";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid value for {key}: {msg}")]
    Env { key: &'static str, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which judge grades rubric steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    #[default]
    #[serde(alias = "STUB")]
    Stub,
    #[serde(alias = "LIVE")]
    Live,
}

impl FromStr for JudgeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "stub" => Ok(JudgeKind::Stub),
            "live" => Ok(JudgeKind::Live),
            other => Err(format!("unknown judge `{other}` (expected stub or live)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub max_batch: usize,
    pub max_body_bytes: usize,
    /// Score samples on the rayon pool (when compiled in).
    pub parallel: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8710".into(),
            max_batch: 256,
            max_body_bytes: 64 << 20,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeSection {
    /// Judge used when a request does not name one.
    pub kind: JudgeKind,
    pub stub: StubMode,
    pub live: JudgeConfig,
    /// Prefer the environment; a key written here ends up in backups.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub mode: RewardMode,
    /// Unset: gold verification when the sample has a gold query,
    /// differential otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify_mode: Option<VerifyMode>,
}

/// Trainer-side hyperparameters. The service does not train; these are
/// carried so that one file configures both ends of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub optimizer: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_epochs: usize,
    pub max_prompt_length: usize,
    pub max_response_length: usize,
    pub ppo_mini_batch_size: usize,
    pub log_prob_micro_batch_size: usize,
    pub tensor_parallel_size: usize,
    /// Rollouts per prompt (the group size G).
    pub rollouts: usize,
    pub gpu_memory_utilization: f64,
    pub temperature: f64,
    pub do_sample: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            optimizer: "AdamW".into(),
            learning_rate: 1e-6,
            batch_size: 32,
            total_epochs: 3,
            max_prompt_length: 4096,
            max_response_length: 2048,
            ppo_mini_batch_size: 8,
            log_prob_micro_batch_size: 8,
            tensor_parallel_size: 2,
            rollouts: 5,
            gpu_memory_utilization: 0.6,
            temperature: 1.0,
            do_sample: true,
        }
    }
}

/// A chat-completion model used by the synthesis agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelEndpoint {
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
}

impl Default for ModelEndpoint {
    fn default() -> Self {
        ModelEndpoint {
            endpoint: "http://127.0.0.1:8001/v1".into(),
            model_name: "generator".into(),
            temperature: 0.7,
            timeout_secs: 120.0,
            api_key: None,
        }
    }
}

impl ModelEndpoint {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSection {
    pub pipeline: SynthesisConfig,
    pub generator: ModelEndpoint,
    /// Falls back to the generator when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrector: Option<ModelEndpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Databases live at `<db_root>/<db_id>/<db_id>.sqlite`.
    pub db_root: PathBuf,
    pub server: ServerConfig,
    pub exec: ExecConfig,
    pub judge: JudgeSection,
    pub reward: RewardSection,
    pub grpo: GrpoConfig,
    pub training: TrainingConfig,
    pub synthesis: SynthesisSection,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            db_root: PathBuf::from("databases"),
            server: ServerConfig::default(),
            exec: ExecConfig::default(),
            judge: JudgeSection::default(),
            reward: RewardSection::default(),
            grpo: GrpoConfig::default(),
            training: TrainingConfig::default(),
            synthesis: SynthesisSection::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads `path` (defaults when `None`), applies environment overrides and
    /// validates the result.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        Self::load_with_env(path, |k| std::env::var(k).ok())
    }

    pub fn load_with_env(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text, p)?
            }
            None => ServiceConfig::default(),
        };
        cfg.apply_env(env)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(root) = env(ENV_DB_ROOT).filter(|v| !v.is_empty()) {
            self.db_root = PathBuf::from(root);
        }
        if let Some(endpoint) = env(ENV_JUDGE_ENDPOINT).filter(|v| !v.is_empty()) {
            self.judge.live.endpoint = endpoint;
        }
        if let Some(key) = env(ENV_JUDGE_KEY).filter(|v| !v.is_empty()) {
            self.judge.api_key = Some(key);
        }
        if let Some(raw) = env(ENV_MAX_BATCH) {
            self.server.max_batch = raw.trim().parse().map_err(|e| ConfigError::Env {
                key: ENV_MAX_BATCH,
                msg: format!("`{raw}`: {e}"),
            })?;
        }
        Ok(())
    }

    // negated so NaN fails too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.server.max_batch == 0 {
            return bad("server.max_batch must be at least 1".into());
        }
        if self.exec.row_cap == 0 || self.exec.timeout.is_zero() {
            return bad("exec.row_cap and exec.timeout must be positive".into());
        }
        if !(self.exec.float_tol >= 0.0) {
            return bad("exec.float_tol must be non-negative".into());
        }
        self.judge.live.validate().map_err(ConfigError::Invalid)?;
        self.grpo.validate().map_err(|e| ConfigError::Invalid(format!("grpo: {e}")))?;
        let p = &self.synthesis.pipeline;
        if p.memory_capacity == 0 || p.wave_size == 0 {
            return bad("synthesis.pipeline memory_capacity and wave_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&p.partial_match_threshold) {
            return bad("synthesis.pipeline.partial_match_threshold must be in [0, 1]".into());
        }
        let t = &self.training;
        if t.rollouts == 0 || t.batch_size == 0 {
            return bad("training.rollouts and training.batch_size must be positive".into());
        }
        if !(t.learning_rate > 0.0) {
            return bad("training.learning_rate must be positive".into());
        }
        Ok(())
    }

    pub fn strategy(&self) -> Strategy {
        if self.server.parallel {
            Strategy::Parallel
        } else {
            Strategy::Sequential
        }
    }

    /// The config with credentials removed.
    pub fn redacted(&self) -> ServiceConfig {
        let mut c = self.clone();
        c.judge.api_key = None;
        c.synthesis.generator.api_key = None;
        if let Some(corr) = &mut c.synthesis.corrector {
            corr.api_key = None;
        }
        c
    }

    /// SHA-256 over the canonical JSON form of the redacted config.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(&self.redacted()).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(&self.redacted()).expect("config serializes")
    }
}
