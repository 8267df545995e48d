//! Chat-completion client for a live text-generation endpoint.

use std::time::Duration;

use kore_core::{GenClient, KoreError};
use serde::Deserialize;
use serde_json::json;

pub const API_KEY_ENV: &str = "KORE_LLM_API_KEY";

pub struct HttpClient {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

impl HttpClient {
    /// `base_url` is the API root; requests go to `<base_url>/chat/completions`.
    pub fn new(base_url: &str, model: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .new_agent();
        HttpClient {
            agent,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.into(),
            api_key,
        }
    }

    pub fn from_env(base_url: &str, model: impl Into<String>) -> Self {
        Self::new(base_url, model, std::env::var(API_KEY_ENV).ok())
    }
}

impl GenClient for HttpClient {
    fn generate(&self, system: &str, user: &str) -> kore_core::Result<String> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| KoreError::Client(format!("{}: {e}", self.endpoint)))?;
        let parsed: Completion = resp
            .body_mut()
            .read_json()
            .map_err(|e| KoreError::Client(format!("bad completion body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| KoreError::Client("completion has no choices".into()))
    }
}
