use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{EndpointConfig, RemoteError, Result};

/// Why a single request attempt failed.
#[derive(Debug, Clone)]
pub(crate) enum Failure {
    /// No HTTP response: connection refused, reset, or timed out.
    Transport(String),
    /// A response arrived but was unusable.
    Response(String),
}

impl Failure {
    pub(crate) fn message(&self) -> &str {
        match self {
            Failure::Transport(m) | Failure::Response(m) => m,
        }
    }
}

/// Shared HTTP client with an optional bearer token.
#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    api_key: Option<String>,
}

impl Default for Client {
    fn default() -> Self {
        Client::new(None)
    }
}

impl Client {
    pub fn new(api_key: Option<String>) -> Self {
        Client { http: reqwest::Client::new(), api_key }
    }

    fn auth(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.api_key {
            Some(k) => req.bearer_auth(k),
            None => req,
        }
    }

    /// Lists models on the endpoint, retrying transport failures.
    pub async fn probe(&self, ep: &EndpointConfig) -> Result<()> {
        let url = ep.url("/v1/models");
        let mut last = String::new();
        for attempt in 0..=ep.max_retries {
            if attempt > 0 {
                tokio::time::sleep(ep.backoff(attempt - 1)).await;
            }
            match self.auth(self.http.get(&url)).timeout(ep.timeout()).send().await {
                Ok(r) if r.status().is_success() => return Ok(()),
                Ok(r) => last = format!("HTTP {}", r.status()),
                Err(e) => last = e.to_string(),
            }
        }
        Err(RemoteError::EndpointDown { url, attempts: ep.max_retries + 1, reason: last })
    }

    pub(crate) async fn post_json<B: Serialize, R: DeserializeOwned>(
        &self,
        ep: &EndpointConfig,
        path: &str,
        body: &B,
    ) -> std::result::Result<R, Failure> {
        let resp = self
            .auth(self.http.post(ep.url(path)))
            .timeout(ep.timeout())
            .json(body)
            .send()
            .await
            .map_err(|e| Failure::Transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| Failure::Transport(e.to_string()))?;
        if !status.is_success() {
            let snippet: String = String::from_utf8_lossy(&bytes).chars().take(200).collect();
            return Err(Failure::Response(format!("HTTP {status}: {snippet}")));
        }
        serde_json::from_slice(&bytes).map_err(|e| Failure::Response(format!("malformed response body: {e}")))
    }
}
