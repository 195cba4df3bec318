use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::{
    ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, FinishReason, GatewayError, Usage, DEFAULT_EMBED_MODEL,
};

pub const ENV_BASE_URL: &str = "TOOLWEAVE_BASE_URL";
pub const ENV_API_KEY: &str = "TOOLWEAVE_API_KEY";
pub const ENV_CHAT_MODEL: &str = "TOOLWEAVE_CHAT_MODEL";
pub const ENV_EMBED_MODEL: &str = "TOOLWEAVE_EMBED_MODEL";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub chat_model: String,
    pub embed_model: String,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn from_env() -> Result<Self, GatewayError> {
        let base_url = std::env::var(ENV_BASE_URL)
            .map_err(|_| GatewayError::InvalidRequest(format!("{ENV_BASE_URL} is not set")))?;
        Ok(HttpConfig {
            base_url,
            api_key: std::env::var(ENV_API_KEY).ok(),
            chat_model: std::env::var(ENV_CHAT_MODEL).unwrap_or_else(|_| "gpt-5-mini".into()),
            embed_model: std::env::var(ENV_EMBED_MODEL).unwrap_or_else(|_| DEFAULT_EMBED_MODEL.into()),
            timeout: Duration::from_secs(120),
        })
    }
}

/// Chat-completions compatible HTTP provider.
pub struct HttpProvider {
    cfg: HttpConfig,
    agent: Agent,
}

impl HttpProvider {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent: Agent =
            Agent::config_builder().timeout_global(Some(cfg.timeout)).http_status_as_error(false).build().into();
        HttpProvider { cfg, agent }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let mut req = self.agent.post(&self.url(path));
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp =
            req.send_json(body).map_err(|e| GatewayError::Transport { attempts: 1, message: e.to_string() })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Transport { attempts: 1, message: e.to_string() })?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Status { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| GatewayError::Provider(format!("undecodable response body: {e}")))
    }
}

pub(crate) fn parse_chat_body(body: &Value) -> Result<ChatResponse, GatewayError> {
    let choice = body.pointer("/choices/0").ok_or_else(|| GatewayError::Provider("response has no choices".into()))?;
    let content = choice.pointer("/message/content").and_then(Value::as_str).unwrap_or_default().to_string();
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some("error") | Some("content_filter") => FinishReason::Error,
        Some(_) if content.is_empty() => FinishReason::Error,
        Some(_) => FinishReason::Stop,
    };
    if finish_reason == FinishReason::Stop && content.is_empty() {
        return Err(GatewayError::Provider("empty completion".into()));
    }
    let u = |k: &str| body.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0) as u32;
    Ok(ChatResponse {
        content,
        finish_reason,
        usage: Usage { prompt_tokens: u("prompt_tokens"), completion_tokens: u("completion_tokens") },
    })
}

impl ChatProvider for HttpProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let model = if req.model_id.is_empty() { &self.cfg.chat_model } else { &req.model_id };
        let body = json!({
            "model": model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        parse_chat_body(&self.post("chat/completions", &body)?)
    }
}

impl EmbeddingProvider for HttpProvider {
    fn model_id(&self) -> &str {
        &self.cfg.embed_model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = json!({"model": self.cfg.embed_model, "input": texts});
        let resp = self.post("embeddings", &body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::Provider("embedding response has no data".into()))?;
        let mut out = vec![Vec::new(); texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let values: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_f64).collect())
                .unwrap_or_default();
            if idx < out.len() {
                out[idx] = values;
            }
        }
        if out.iter().any(Vec::is_empty) {
            return Err(GatewayError::Provider("embedding response is incomplete".into()));
        }
        Ok(out)
    }
}
