//! HTTP adapters for hosted multimodal models.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, Completion};
use crate::types::{GenerationParams, ModelRequest, Part};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HttpApi {
    /// Chat-completions style endpoint taking `image_url` data URIs.
    #[default]
    OpenaiChat,
    /// `generateContent` style endpoint taking `inline_data` parts.
    Gemini,
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    api: HttpApi,
    endpoint: String,
    model: String,
    api_key_env: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        api: HttpApi,
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key_env: Option<String>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Permanent(format!("http client: {e}")))?;
        Ok(Self {
            api,
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: api_key_env.filter(|s| !s.is_empty()),
            client,
        })
    }

    fn api_key(&self) -> Result<Option<String>, BackendError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| BackendError::Permanent(format!("environment variable {var} is not set"))),
        }
    }

    fn url(&self) -> String {
        match self.api {
            HttpApi::OpenaiChat => self.endpoint.clone(),
            HttpApi::Gemini => format!(
                "{}/models/{}:generateContent",
                self.endpoint.trim_end_matches('/'),
                self.model
            ),
        }
    }
}

fn image_payload(part: &Part) -> Result<Option<(String, String)>, BackendError> {
    match part {
        Part::Image { frame } => {
            let (mime, bytes) = frame
                .image
                .load()
                .map_err(|e| BackendError::Permanent(format!("frame at {:.1}s: {e}", frame.timestamp)))?;
            Ok(Some((
                mime,
                base64::engine::general_purpose::STANDARD.encode(bytes.as_slice()),
            )))
        }
        Part::Text { .. } => Ok(None),
    }
}

pub fn openai_body(model: &str, req: &ModelRequest, params: &GenerationParams) -> Result<Value, BackendError> {
    let mut content = Vec::with_capacity(req.parts.len());
    for part in &req.parts {
        match part {
            Part::Text { text } => content.push(json!({"type": "text", "text": text})),
            Part::Image { .. } => {
                let (mime, data) = image_payload(part)?.expect("image part");
                content.push(json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:{mime};base64,{data}")}
                }));
            }
        }
    }
    let mut body = json!({
        "model": model,
        "messages": [{"role": "user", "content": content}],
    });
    if let Some(t) = params.temperature {
        body["temperature"] = json!(t);
    }
    if let Some(m) = params.max_output_tokens {
        body["max_tokens"] = json!(m);
    }
    Ok(body)
}

pub fn parse_openai(v: &Value) -> Result<Completion, BackendError> {
    let text = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| BackendError::Permanent("response has no message content".into()))?;
    Ok(Completion {
        text: text.to_string(),
        input_units: v["usage"]["prompt_tokens"].as_u64(),
        output_units: v["usage"]["completion_tokens"].as_u64(),
    })
}

pub fn gemini_body(req: &ModelRequest, params: &GenerationParams) -> Result<Value, BackendError> {
    let mut parts = Vec::with_capacity(req.parts.len());
    for part in &req.parts {
        match part {
            Part::Text { text } => parts.push(json!({"text": text})),
            Part::Image { .. } => {
                let (mime, data) = image_payload(part)?.expect("image part");
                parts.push(json!({"inline_data": {"mime_type": mime, "data": data}}));
            }
        }
    }
    let mut config = serde_json::Map::new();
    if let Some(t) = params.temperature {
        config.insert("temperature".into(), json!(t));
    }
    if let Some(m) = params.max_output_tokens {
        config.insert("maxOutputTokens".into(), json!(m));
    }
    Ok(json!({
        "contents": [{"role": "user", "parts": parts}],
        "generationConfig": config,
    }))
}

pub fn parse_gemini(v: &Value) -> Result<Completion, BackendError> {
    let parts = v["candidates"][0]["content"]["parts"]
        .as_array()
        .ok_or_else(|| BackendError::Permanent("response has no candidate content".into()))?;
    let text: String = parts.iter().filter_map(|p| p["text"].as_str()).collect();
    Ok(Completion {
        text,
        input_units: v["usageMetadata"]["promptTokenCount"].as_u64(),
        output_units: v["usageMetadata"]["candidatesTokenCount"].as_u64(),
    })
}

/// Rate limits and server errors are worth retrying; other client errors
/// are not.
pub fn classify_status(status: u16, body: &str) -> BackendError {
    let msg = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    if status == 429 || status == 408 || status >= 500 {
        BackendError::Transient(msg)
    } else {
        BackendError::Permanent(msg)
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &ModelRequest, params: &GenerationParams) -> Result<Completion, BackendError> {
        let key = self.api_key()?;
        let body = match self.api {
            HttpApi::OpenaiChat => openai_body(&self.model, req, params)?,
            HttpApi::Gemini => gemini_body(req, params)?,
        };
        let mut builder = self.client.post(self.url()).json(&body);
        if let Some(key) = key {
            builder = match self.api {
                HttpApi::OpenaiChat => builder.bearer_auth(key),
                HttpApi::Gemini => builder.header("x-goog-api-key", key),
            };
        }
        let resp = builder
            .send()
            .map_err(|e| BackendError::Transient(format!("network: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .text()
            .map_err(|e| BackendError::Transient(format!("reading body: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &text));
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Permanent(format!("malformed response body: {e}")))?;
        match self.api {
            HttpApi::OpenaiChat => parse_openai(&v),
            HttpApi::Gemini => parse_gemini(&v),
        }
    }
}
