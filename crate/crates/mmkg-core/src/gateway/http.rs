//! HTTP backend speaking the JSON chat-completions / embeddings interface
//! most inference servers expose.

use serde::{Deserialize, Serialize};
use serde_json::json;
use std::time::Duration;

use super::{Backend, ChatRequest};
use crate::error::{Error, Result};

fn default_api_key_env() -> String {
    "MMKG_API_KEY".to_string()
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    2
}

/// Where one model lives and how to talk to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

impl ModelEndpoint {
    pub fn new(base_url: &str, model_name: &str) -> Self {
        ModelEndpoint {
            base_url: base_url.to_string(),
            model_name: model_name.to_string(),
            api_key_env: default_api_key_env(),
            timeout_s: default_timeout(),
            max_retries: default_retries(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_s > 0.0) {
            return Err(Error::Parameter(format!(
                "endpoint `{}`: timeout_s must be positive, got {}",
                self.model_name, self.timeout_s
            )));
        }
        if self.base_url.is_empty() {
            return Err(Error::Parameter("endpoint base_url must be nonempty".into()));
        }
        Ok(())
    }

    fn api_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty())
    }

    fn url(&self, route: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), route)
    }
}

/// Chat, vision and embedding endpoints; vision falls back to the chat
/// endpoint when not configured separately.
pub struct HttpBackend {
    chat: ModelEndpoint,
    vision: ModelEndpoint,
    embed: ModelEndpoint,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        chat: ModelEndpoint,
        vision: Option<ModelEndpoint>,
        embed: ModelEndpoint,
    ) -> Result<Self> {
        let vision = vision.unwrap_or_else(|| chat.clone());
        for endpoint in [&chat, &vision, &embed] {
            endpoint.validate()?;
        }
        let timeout = chat.timeout_s.max(vision.timeout_s).max(embed.timeout_s);
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(timeout))
            .build()
            .map_err(|e| Error::Gateway {
                attempts: 0,
                message: format!("building HTTP client: {e}"),
            })?;
        Ok(HttpBackend {
            chat,
            vision,
            embed,
            client,
        })
    }

    fn post(
        &self,
        endpoint: &ModelEndpoint,
        route: &str,
        body: serde_json::Value,
    ) -> Result<serde_json::Value> {
        let mut request = self.client.post(endpoint.url(route)).json(&body);
        if let Some(key) = endpoint.api_key() {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(transport_error)?;
        let status = response.status();
        let payload: serde_json::Value = response.json().map_err(transport_error)?;
        if !status.is_success() {
            return Err(Error::Gateway {
                attempts: 1,
                message: format!("{} returned {status}: {payload}", endpoint.url(route)),
            });
        }
        Ok(payload)
    }
}

fn transport_error(e: reqwest::Error) -> Error {
    Error::Gateway {
        attempts: 1,
        message: e.to_string(),
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        &self.embed.model_name
    }

    fn chat(&self, request: &ChatRequest) -> Result<String> {
        let endpoint = if request.images.is_empty() {
            &self.chat
        } else {
            &self.vision
        };
        let content = if request.images.is_empty() {
            json!(request.prompt)
        } else {
            let mut parts = vec![json!({"type": "text", "text": request.prompt})];
            for attachment in request.images {
                parts.push(json!({
                    "type": "image_url",
                    "image_url": {"url": attachment.data_url()}
                }));
            }
            json!(parts)
        };
        let body = json!({
            "model": endpoint.model_name,
            "messages": [{"role": "user", "content": content}],
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        });
        let payload = self.post(endpoint, "chat/completions", body)?;
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Gateway {
                attempts: 1,
                message: format!("chat response missing choices[0].message.content: {payload}"),
            })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let body = json!({
            "model": self.embed.model_name,
            "input": texts,
        });
        let payload = self.post(&self.embed, "embeddings", body)?;
        let data = payload["data"].as_array().ok_or_else(|| Error::Gateway {
            attempts: 1,
            message: format!("embedding response missing data array: {payload}"),
        })?;
        data.iter()
            .map(|entry| {
                entry["embedding"]
                    .as_array()
                    .map(|values| values.iter().filter_map(|v| v.as_f64()).collect())
                    .ok_or_else(|| Error::Gateway {
                        attempts: 1,
                        message: "embedding entry missing values".into(),
                    })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_validation_rejects_zero_timeout() {
        let mut endpoint = ModelEndpoint::new("http://localhost:8000/v1", "m");
        endpoint.timeout_s = 0.0;
        assert!(endpoint.validate().is_err());
    }

    #[test]
    fn url_joining_handles_trailing_slash() {
        let endpoint = ModelEndpoint::new("http://h/v1/", "m");
        assert_eq!(endpoint.url("chat/completions"), "http://h/v1/chat/completions");
    }
}
