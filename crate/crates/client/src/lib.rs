//! Async client for the stochseg session service.

use base64::Engine;
use reqwest::multipart::{Form, Part};
use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;
use stochseg::api::{CreatedSession, ErrorBody, ScribbleUpdate, SegmentRequest, SegmentResponse, SessionCount, Stroke};
use stochseg::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with a non-success status.
    #[error("service returned {status}: {message}")]
    Api { status: u16, message: String },
    #[error("http error: {0}")]
    Http(#[from] reqwest::Error),
    #[error("bad mask encoding: {0}")]
    Decode(#[from] base64::DecodeError),
    #[error("config does not serialise: {0}")]
    Json(#[from] serde_json::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

async fn check(resp: Response) -> Result<Response> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let text = resp.text().await.unwrap_or_default();
    let message = serde_json::from_str::<ErrorBody>(&text)
        .map(|b| b.error)
        .unwrap_or(text);
    Err(ClientError::Api {
        status: status.as_u16(),
        message,
    })
}

async fn json<T: DeserializeOwned>(resp: Response) -> Result<T> {
    Ok(check(resp).await?.json().await?)
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn health(&self) -> Result<bool> {
        let resp = self.http.get(self.url("/healthz")).send().await?;
        Ok(resp.status() == StatusCode::OK)
    }

    pub async fn session_count(&self) -> Result<usize> {
        let c: SessionCount = json(self.http.get(self.url("/sessions")).send().await?).await?;
        Ok(c.sessions)
    }

    /// Uploads encoded image bytes; `config` replaces the service defaults.
    pub async fn create_session(&self, image: Vec<u8>, config: Option<&RunConfig>) -> Result<CreatedSession> {
        let mut form = Form::new().part("image", Part::bytes(image).file_name("image"));
        if let Some(cfg) = config {
            form = form.text("config", serde_json::to_string(cfg)?);
        }
        json(self.http.post(self.url("/sessions")).multipart(form).send().await?).await
    }

    pub async fn put_scribbles(&self, id: &str, strokes: Vec<Stroke>, clear: bool) -> Result<()> {
        let body = ScribbleUpdate { strokes, clear };
        let resp = self
            .http
            .put(self.url(&format!("/sessions/{id}/scribbles")))
            .json(&body)
            .send()
            .await?;
        check(resp).await?;
        Ok(())
    }

    /// Current scribbles rendered as a red/blue PNG.
    pub async fn scribbles_png(&self, id: &str) -> Result<Vec<u8>> {
        let resp = self
            .http
            .get(self.url(&format!("/sessions/{id}/scribbles")))
            .send()
            .await?;
        Ok(check(resp).await?.bytes().await?.to_vec())
    }

    pub async fn segment(&self, id: &str, req: &SegmentRequest) -> Result<SegmentResponse> {
        let resp = self
            .http
            .post(self.url(&format!("/sessions/{id}/segment")))
            .json(req)
            .send()
            .await?;
        json(resp).await
    }

    /// Last mask as PNG bytes.
    pub async fn mask(&self, id: &str) -> Result<Vec<u8>> {
        let resp = self.http.get(self.url(&format!("/sessions/{id}/mask"))).send().await?;
        Ok(check(resp).await?.bytes().await?.to_vec())
    }

    pub async fn delete_session(&self, id: &str) -> Result<()> {
        let resp = self.http.delete(self.url(&format!("/sessions/{id}"))).send().await?;
        check(resp).await?;
        Ok(())
    }
}

/// PNG bytes carried in a segment response.
pub fn decode_mask_png(resp: &SegmentResponse) -> Result<Vec<u8>> {
    Ok(base64::engine::general_purpose::STANDARD.decode(&resp.mask_png_base64)?)
}
