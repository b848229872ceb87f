use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    parse_generative_response, AdapterRequest, Classifier, ClassifierError, ParsedResponse, PromptTemplate,
    ScoreOutcome,
};

/// Generic chat-completion endpoint settings. Decoding is greedy and short.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding a bearer token, if any.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_max_tokens() -> u32 {
    4
}

fn default_timeout() -> u64 {
    60
}

impl ChatConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ChatConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            token_env: None,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
        }
    }
}

/// Zero-shot generative classifier. Sends the bare sentence rendered into the
/// template; replies outside the 0/1 grammar become [`ScoreOutcome::Abstain`].
pub struct ChatCompletionClient {
    config: ChatConfig,
    template: PromptTemplate,
    agent: ureq::Agent,
}

impl ChatCompletionClient {
    pub fn new(config: ChatConfig, template: PromptTemplate) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .build()
            .into();
        ChatCompletionClient {
            config,
            template,
            agent,
        }
    }

    /// Request body for one sentence.
    pub fn request_body(&self, sentence: &str) -> Result<serde_json::Value, ClassifierError> {
        Ok(json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": self.template.render(sentence)?}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }))
    }

    fn complete(&self, body: &serde_json::Value) -> Result<String, String> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(var) = &self.config.token_env {
            let token = std::env::var(var).map_err(|_| format!("token variable {var} is not set"))?;
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let reply: serde_json::Value = req
            .send_json(body)
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| e.to_string())?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| "reply has no choices[0].message.content".to_string())
    }
}

impl Classifier for ChatCompletionClient {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn score_batch(&self, requests: &[AdapterRequest]) -> Result<Vec<ScoreOutcome>, ClassifierError> {
        let mut out = Vec::with_capacity(requests.len());
        let mut failures = 0;
        for r in requests {
            let body = self.request_body(&r.text)?;
            out.push(match self.complete(&body) {
                Ok(text) => match parse_generative_response(&text) {
                    ParsedResponse::Label(l) => ScoreOutcome::Score(if l.is_biased() { 1.0 } else { 0.0 }),
                    ParsedResponse::Abstain => ScoreOutcome::Abstain,
                },
                Err(e) => {
                    failures += 1;
                    ScoreOutcome::Error(e)
                }
            });
        }
        if failures > 0 && failures == requests.len() {
            if let Some(ScoreOutcome::Error(e)) = out.pop() {
                return Err(ClassifierError::AdapterUnavailable(format!(
                    "{}: {e}",
                    self.config.endpoint
                )));
            }
        }
        Ok(out)
    }
}
