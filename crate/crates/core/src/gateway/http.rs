use async_trait::async_trait;
use serde::Deserialize;

use super::{AttemptError, ChatBackend, ChatReply, ChatRequestBody};

/// Environment variable holding the bearer token for the endpoint.
pub const API_KEY_ENV: &str = "FALLACY_API_KEY";

/// Posts to `{endpoint_url}/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint_url: &str, api_key: Option<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            url: format!("{}/chat/completions", endpoint_url.trim_end_matches('/')),
            api_key: api_key.filter(|k| !k.is_empty()),
        }
    }

    /// Reads the API key from [`API_KEY_ENV`].
    pub fn from_env(endpoint_url: &str) -> Self {
        Self::new(endpoint_url, std::env::var(API_KEY_ENV).ok())
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
    /// Servers with a reasoning parser split the thinking segment out.
    #[serde(default)]
    reasoning_content: Option<String>,
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn send(&self, body: &ChatRequestBody) -> Result<ChatReply, AttemptError> {
        let mut request = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(AttemptError::transport)?;
        let status = response.status();
        let text = response.text().await.map_err(AttemptError::transport)?;
        if !status.is_success() {
            return Err(AttemptError::Http {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(AttemptError::protocol)?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| AttemptError::protocol("response has no choices"))?;
        let content = choice.message.content.unwrap_or_default();
        // Re-attach a separated thinking segment so the record keeps the raw
        // completion in one piece.
        let text = match choice.message.reasoning_content.filter(|r| !r.is_empty()) {
            Some(reasoning) => format!("<think>{reasoning}</think>{content}"),
            None => content,
        };
        Ok(ChatReply {
            text,
            finish_reason: choice.finish_reason.unwrap_or_else(|| "unknown".into()),
        })
    }
}
