//! Run configuration, loaded from a single TOML document.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisConfig;
use crate::captioning::CaptioningConfig;
use crate::framing::SamplingConfig;
use crate::gateway::http::{HttpApi, HttpBackend};
use crate::gateway::{Backend, Gateway, Lane, PriceTable, RetryPolicy, ScriptedBackend, UsageEstimate};
use crate::types::GenerationParams;
use crate::video::DecoderConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Http,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub api: HttpApi,
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    /// Call-log file or directory replayed by the scripted backend.
    pub transcripts: Option<PathBuf>,
    pub max_parallel: usize,
    pub requests_per_minute: Option<usize>,
    pub timeout_s: u64,
    pub retry: RetryPolicy,
    pub params: GenerationParams,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Http,
            api: HttpApi::OpenaiChat,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            transcripts: None,
            max_parallel: 8,
            requests_per_minute: None,
            timeout_s: 120,
            retry: RetryPolicy::default(),
            params: GenerationParams {
                temperature: Some(0.0),
                max_output_tokens: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    /// Questions evaluated concurrently.
    pub workers: usize,
    pub baseline_frames_long: usize,
    pub baseline_frames_short: usize,
    /// Videos longer than this use `baseline_frames_long`.
    pub baseline_long_threshold_s: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            baseline_frames_long: 256,
            baseline_frames_short: 128,
            baseline_long_threshold_s: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub store_root: PathBuf,
    pub videos_dir: Option<PathBuf>,
    /// Directory of `<stage>.v1.txt` files overriding built-in prompts.
    pub templates_dir: Option<PathBuf>,
    pub vision: BackendConfig,
    pub language: BackendConfig,
    pub sampling: SamplingConfig,
    pub captioning: CaptioningConfig,
    pub analysis: AnalysisConfig,
    pub harness: HarnessConfig,
    pub decoder: DecoderConfig,
    pub estimate: UsageEstimate,
    pub prices: PriceTable,
}

impl Default for Config {
    fn default() -> Self {
        let language = BackendConfig {
            model: "gpt-4o-mini".into(),
            ..BackendConfig::default()
        };
        Self {
            store_root: PathBuf::from("store"),
            videos_dir: None,
            templates_dir: None,
            vision: BackendConfig::default(),
            language,
            sampling: SamplingConfig::default(),
            captioning: CaptioningConfig::default(),
            analysis: AnalysisConfig::default(),
            harness: HarnessConfig::default(),
            decoder: DecoderConfig::default(),
            estimate: UsageEstimate::default(),
            prices: PriceTable::default(),
        }
    }
}

impl Config {
    /// Relative paths inside the file are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Config = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.store_root);
        for p in [&mut cfg.videos_dir, &mut cfg.templates_dir].into_iter().flatten() {
            resolve(p);
        }
        for p in [&mut cfg.vision.transcripts, &mut cfg.language.transcripts]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sampling
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.captioning.describe_window == 0 {
            return Err(ConfigError::Invalid(
                "captioning.describe_window must be positive".into(),
            ));
        }
        Ok(())
    }

    /// One knob for all concurrency: gateway admission and worker pools.
    pub fn set_parallelism(&mut self, n: usize) {
        let n = n.max(1);
        self.vision.max_parallel = n;
        self.language.max_parallel = n;
        self.captioning.workers = n;
        self.analysis.workers = n;
        self.harness.workers = n;
    }

    /// Points both lanes at recorded call logs.
    pub fn use_scripted(&mut self, transcripts: &Path) {
        for b in [&mut self.vision, &mut self.language] {
            b.kind = BackendKind::Scripted;
            b.transcripts = Some(transcripts.to_path_buf());
        }
    }

    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        // Lanes replaying the same logs share one loaded backend.
        let shared = match (&self.vision, &self.language) {
            (v, l)
                if v.kind == BackendKind::Scripted
                    && l.kind == BackendKind::Scripted
                    && v.transcripts == l.transcripts =>
            {
                Some(scripted_backend(v)?)
            }
            _ => None,
        };
        let lane = |b: &BackendConfig| -> Result<Lane, ConfigError> {
            let backend = match &shared {
                Some(s) => s.clone(),
                None => backend_for(b)?,
            };
            Ok(Lane::new(backend, b.model.clone())
                .max_parallel(b.max_parallel)
                .rate_limit(b.requests_per_minute)
                .retry(b.retry)
                .params(b.params.clone()))
        };
        Ok(Gateway::new(lane(&self.vision)?, lane(&self.language)?)
            .with_prices(self.prices.clone())
            .with_estimate(self.estimate))
    }
}

fn scripted_backend(b: &BackendConfig) -> Result<Arc<dyn Backend>, ConfigError> {
    let dir = b
        .transcripts
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("scripted backend needs `transcripts`".into()))?;
    let backend = ScriptedBackend::load(dir).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(Arc::new(backend))
}

fn backend_for(b: &BackendConfig) -> Result<Arc<dyn Backend>, ConfigError> {
    match b.kind {
        BackendKind::Scripted => scripted_backend(b),
        BackendKind::Http => {
            let backend = HttpBackend::new(
                b.api,
                b.endpoint.clone(),
                b.model.clone(),
                b.api_key_env.clone(),
                Duration::from_secs(b.timeout_s),
            )
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            Ok(Arc::new(backend))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_document() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vmr.toml");
        std::fs::write(
            &path,
            r#"
store_root = "out"

[vision]
kind = "http"
api = "gemini"
endpoint = "https://generativelanguage.googleapis.com/v1beta"
model = "vision-model"
api_key_env = "GEMINI_API_KEY"
max_parallel = 4
requests_per_minute = 60

[vision.retry]
max_attempts = 5

[language]
kind = "scripted"
model = "lang-model"
transcripts = "calls"

[sampling]
chunk_scenes = 50

[analysis]
global_perception = "skip_on_local"

[prices."vision-model"]
input_per_mtok = 0.1
output_per_mtok = 0.4
"#,
        )
        .unwrap();
        let cfg = Config::load(&path).unwrap();
        assert_eq!(cfg.store_root, dir.path().join("out"));
        assert_eq!(cfg.vision.api, HttpApi::Gemini);
        assert_eq!(cfg.vision.retry.max_attempts, 5);
        assert_eq!(cfg.vision.retry.backoff_base_ms, RetryPolicy::default().backoff_base_ms);
        assert_eq!(cfg.language.transcripts, Some(dir.path().join("calls")));
        assert_eq!(cfg.sampling.chunk_scenes, 50);
        assert_eq!(cfg.sampling.caption_unit_s, 10.0);
        assert_eq!(cfg.prices.cost_nanos("vision-model", 1_000_000, 0), 100_000_000);
    }

    #[test]
    fn rejects_bad_sampling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vmr.toml");
        std::fs::write(&path, "[sampling]\nframe_cap = 64\n").unwrap();
        assert!(matches!(Config::load(&path), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn unknown_keys_are_rejected_by_type() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vmr.toml");
        std::fs::write(&path, "[vision]\nmax_parallel = \"many\"\n").unwrap();
        assert!(matches!(Config::load(&path), Err(ConfigError::Parse { .. })));
    }
}
