//! Single entry point for every model call: contract checks, admission,
//! rate limiting, retries, usage accounting and the call log.

pub mod http;
pub mod ledger;
pub mod rate_limit;
pub mod scripted;
pub mod transcript;

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{GenerationParams, ModelRequest, ModelResponse, ModelRole, StageTag, Usage, MAX_IMAGES_PER_REQUEST};

pub use ledger::{record_usage, ModelPrice, PriceTable, UsageEstimate, UsageLedger};
pub use rate_limit::{Clock, RateLimiter, Semaphore, SimClock, SystemClock};
pub use scripted::ScriptedBackend;
pub use transcript::{request_digest, TranscriptLog, TranscriptRecord};

/// Raw output of a backend. Unit counts are optional; missing counts are
/// estimated from the request.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Completion {
    pub text: String,
    pub input_units: Option<u64>,
    pub output_units: Option<u64>,
}

impl Completion {
    pub fn text(s: impl Into<String>) -> Self {
        Self {
            text: s.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("permanent backend failure: {0}")]
    Permanent(String),
    #[error("no recorded response for {stage}/{unit}")]
    ReplayMiss { stage: StageTag, unit: String },
}

pub trait Backend: Send + Sync {
    fn complete(&self, req: &ModelRequest, params: &GenerationParams) -> Result<Completion, BackendError>;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("request contract violated for {unit}: {reason}")]
    Contract { unit: String, reason: String },
    #[error("{stage} call {unit} failed after {attempts} attempt(s): {message}")]
    Transport {
        stage: StageTag,
        unit: String,
        attempts: u32,
        message: String,
        permanent: bool,
    },
    #[error("no recorded response for {stage}/{unit}")]
    ReplayMiss { stage: StageTag, unit: String },
    #[error(transparent)]
    Log(#[from] transcript::TranscriptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): base * 2^(attempt-1).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

/// One model endpoint with its own admission and throttling.
pub struct Lane {
    backend: Arc<dyn Backend>,
    model: String,
    admission: Semaphore,
    limiter: Option<RateLimiter>,
    retry: RetryPolicy,
    params: GenerationParams,
}

impl Lane {
    pub fn new(backend: Arc<dyn Backend>, model: impl Into<String>) -> Self {
        Self {
            backend,
            model: model.into(),
            admission: Semaphore::new(8),
            limiter: None,
            retry: RetryPolicy::default(),
            params: GenerationParams::default(),
        }
    }

    pub fn max_parallel(mut self, n: usize) -> Self {
        self.admission = Semaphore::new(n);
        self
    }

    pub fn rate_limit(mut self, per_minute: Option<usize>) -> Self {
        self.limiter = per_minute.map(RateLimiter::new);
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn params(mut self, params: GenerationParams) -> Self {
        self.params = params;
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }
}

/// Request counters kept for audits.
#[derive(Debug, Default)]
struct Audit {
    requests: AtomicU64,
    baseline_requests: AtomicU64,
    rejected: AtomicU64,
    max_images: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditSnapshot {
    pub requests: u64,
    pub baseline_requests: u64,
    pub rejected: u64,
    /// Largest image count among non-baseline requests.
    pub max_images: usize,
}

pub struct Gateway {
    vision: Lane,
    language: Lane,
    prices: PriceTable,
    estimate: UsageEstimate,
    clock: Arc<dyn Clock>,
    ledger: Mutex<UsageLedger>,
    log: Option<TranscriptLog>,
    audit: Audit,
}

impl Gateway {
    pub fn new(vision: Lane, language: Lane) -> Self {
        Self {
            vision,
            language,
            prices: PriceTable::default(),
            estimate: UsageEstimate::default(),
            clock: Arc::new(SystemClock::default()),
            ledger: Mutex::new(UsageLedger::default()),
            log: None,
            audit: Audit::default(),
        }
    }

    /// Both roles served by one backend, for tests.
    pub fn single(backend: Arc<dyn Backend>, model: &str) -> Self {
        Self::new(Lane::new(backend.clone(), model), Lane::new(backend, model))
    }

    pub fn with_prices(mut self, prices: PriceTable) -> Self {
        self.prices = prices;
        self
    }

    pub fn with_estimate(mut self, estimate: UsageEstimate) -> Self {
        self.estimate = estimate;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_log(mut self, log: TranscriptLog) -> Self {
        self.log = Some(log);
        self
    }

    /// Replaces the call log, returning the previous one.
    pub fn set_log(&mut self, log: Option<TranscriptLog>) -> Option<TranscriptLog> {
        std::mem::replace(&mut self.log, log)
    }

    pub fn lane(&self, role: ModelRole) -> &Lane {
        match role {
            ModelRole::Vision => &self.vision,
            ModelRole::Language => &self.language,
        }
    }

    pub fn prices(&self) -> &PriceTable {
        &self.prices
    }

    pub fn ledger(&self) -> UsageLedger {
        self.ledger.lock().unwrap().clone()
    }

    pub fn audit(&self) -> AuditSnapshot {
        AuditSnapshot {
            requests: self.audit.requests.load(Ordering::SeqCst),
            baseline_requests: self.audit.baseline_requests.load(Ordering::SeqCst),
            rejected: self.audit.rejected.load(Ordering::SeqCst),
            max_images: self.audit.max_images.load(Ordering::SeqCst),
        }
    }

    fn check_contract(&self, req: &ModelRequest) -> Result<(), GatewayError> {
        let violation = |reason: String| GatewayError::Contract {
            unit: req.unit_id.clone(),
            reason,
        };
        if req.unit_id.is_empty() {
            return Err(violation("empty unit id".into()));
        }
        if req.baseline != (req.stage == StageTag::Baseline) {
            return Err(violation(format!(
                "baseline flag {} does not match stage {}",
                req.baseline, req.stage
            )));
        }
        let images = req.image_count();
        if images > MAX_IMAGES_PER_REQUEST && !req.baseline {
            return Err(violation(format!(
                "{images} images exceed the per-request cap of {MAX_IMAGES_PER_REQUEST}"
            )));
        }
        Ok(())
    }

    /// Issues one model call with admission, throttling and retries, then
    /// books its usage and appends it to the call log.
    pub fn query(&self, req: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        if let Err(e) = self.check_contract(req) {
            self.audit.rejected.fetch_add(1, Ordering::SeqCst);
            return Err(e);
        }
        self.audit.requests.fetch_add(1, Ordering::SeqCst);
        if req.baseline {
            self.audit.baseline_requests.fetch_add(1, Ordering::SeqCst);
        } else {
            self.audit.max_images.fetch_max(req.image_count(), Ordering::SeqCst);
        }

        let lane = self.lane(req.stage.role());
        let params = GenerationParams {
            temperature: req.params.temperature.or(lane.params.temperature),
            max_output_tokens: req.params.max_output_tokens.or(lane.params.max_output_tokens),
        };
        let _permit = lane.admission.acquire();
        let max_attempts = lane.retry.max_attempts.max(1);
        let mut attempt = 0;
        let completion = loop {
            attempt += 1;
            if let Some(limiter) = &lane.limiter {
                limiter.acquire(self.clock.as_ref());
            }
            match lane.backend.complete(req, &params) {
                Ok(c) => break c,
                Err(BackendError::Transient(msg)) if attempt < max_attempts => {
                    tracing::debug!(stage = %req.stage, unit = %req.unit_id, attempt, "transient failure: {msg}");
                    self.clock.sleep(lane.retry.backoff(attempt));
                }
                Err(BackendError::Transient(message)) => {
                    return Err(GatewayError::Transport {
                        stage: req.stage,
                        unit: req.unit_id.clone(),
                        attempts: attempt,
                        message,
                        permanent: false,
                    })
                }
                Err(BackendError::Permanent(message)) => {
                    return Err(GatewayError::Transport {
                        stage: req.stage,
                        unit: req.unit_id.clone(),
                        attempts: attempt,
                        message,
                        permanent: true,
                    })
                }
                Err(BackendError::ReplayMiss { stage, unit }) => return Err(GatewayError::ReplayMiss { stage, unit }),
            }
        };
        drop(_permit);

        let input_units = completion.input_units.unwrap_or_else(|| self.estimate.input_units(req));
        let output_units = completion
            .output_units
            .unwrap_or_else(|| self.estimate.text_units(completion.text.chars().count()));
        let usage = Usage {
            calls: 1,
            input_units,
            output_units,
            cost_nanos: self.prices.cost_nanos(&lane.model, input_units, output_units),
        };
        self.ledger.lock().unwrap().record(req.stage, &usage);
        if let Some(log) = &self.log {
            log.append(&TranscriptRecord {
                stage: req.stage,
                unit: req.unit_id.clone(),
                digest: Some(request_digest(req)),
                model: Some(lane.model.clone()),
                images: req.image_count(),
                response: completion.text.clone(),
                usage: Some(usage),
            })?;
        }
        Ok(ModelResponse {
            text: completion.text,
            usage,
        })
    }
}
