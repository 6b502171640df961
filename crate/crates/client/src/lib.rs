//! Thin async client for the editor service.

use dvg_core::api::{DeformRequest, DeformResponse, ErrorBody, MeshPayload, ShapeSummary, TransferRequest};
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("service returned {status}: {}", body.message.as_deref().unwrap_or(&body.error))]
    Api { status: StatusCode, body: ErrorBody },
}

impl ClientError {
    /// The service's error code, for API errors.
    pub fn code(&self) -> Option<&str> {
        match self {
            Self::Api { body, .. } => Some(&body.error),
            Self::Transport(_) => None,
        }
    }

    pub fn status(&self) -> Option<StatusCode> {
        match self {
            Self::Api { status, .. } => Some(*status),
            Self::Transport(e) => e.status(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base_url` like `http://127.0.0.1:8080`.
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_http(base_url, reqwest::Client::new())
    }

    pub fn with_http(base_url: impl Into<String>, http: reqwest::Client) -> Self {
        let base = base_url.into().trim_end_matches('/').to_string();
        Self { base, http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send<B: Serialize, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<T, ClientError> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            error: "http_error".into(),
            message: Some(text),
        });
        Err(ClientError::Api { status, body })
    }

    pub async fn shapes(&self) -> Result<Vec<ShapeSummary>, ClientError> {
        self.send::<(), _>(Method::GET, "/shapes", None).await
    }

    pub async fn mesh(&self, id: &str) -> Result<MeshPayload, ClientError> {
        let path = format!("/shapes/{}/mesh", encode_segment(id));
        self.send::<(), _>(Method::GET, &path, None).await
    }

    /// Non-finite coefficients are sent as `null` and rejected by the service.
    pub async fn deform(&self, shape_id: &str, coeffs: &[f64]) -> Result<DeformResponse, ClientError> {
        let req = DeformRequest {
            shape_id: shape_id.to_string(),
            coeffs: coeffs.iter().map(|&c| Some(c).filter(|c| c.is_finite())).collect(),
        };
        self.send(Method::POST, "/deform", Some(&req)).await
    }

    pub async fn transfer(&self, source_id: &str, target_id: &str) -> Result<MeshPayload, ClientError> {
        let req = TransferRequest {
            source_id: source_id.to_string(),
            target_id: target_id.to_string(),
        };
        self.send(Method::POST, "/transfer", Some(&req)).await
    }
}

/// Percent-encodes everything outside the unreserved URL characters.
fn encode_segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_are_encoded() {
        assert_eq!(encode_segment("chair_01"), "chair_01");
        assert_eq!(encode_segment("a b/c"), "a%20b%2Fc");
    }

    #[test]
    fn base_url_is_trimmed() {
        assert_eq!(Client::new("http://localhost:1/").base_url(), "http://localhost:1");
    }
}
