//! Thin async client for the session service.

use eventsource_stream::Eventsource;
use futures::{Stream, StreamExt};
use reqwest::{RequestBuilder, Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use attribo_core::bo::{Decision, LoggedEvent};
use attribo_core::session::{CreateSession, ObservationRequest, ProposalView, SessionView};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{status}: {message}")]
    Api { status: StatusCode, message: String },
    #[error(transparent)]
    Http(#[from] reqwest::Error),
    #[error("event stream: {0}")]
    Stream(String),
    #[error("bad event payload: {0}")]
    Decode(#[from] serde_json::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Http(e) => e.status(),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

async fn checked(resp: Response) -> Result<Response> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let text = resp.text().await.unwrap_or_default();
    let message = serde_json::from_str::<ErrorBody>(&text).map_or(text, |b| b.error);
    Err(ClientError::Api { status, message })
}

async fn send<T: DeserializeOwned>(req: RequestBuilder) -> Result<T> {
    Ok(checked(req.send().await?).await?.json().await?)
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Client {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn create(
        &self,
        req: &CreateSession,
        idempotency_key: Option<&str>,
    ) -> Result<SessionView> {
        let mut r = self.http.post(self.url("/sessions")).json(req);
        if let Some(k) = idempotency_key {
            r = r.header("Idempotency-Key", k);
        }
        send(r).await
    }

    pub async fn get(&self, id: &str) -> Result<SessionView> {
        send(self.http.get(self.url(&format!("/sessions/{id}")))).await
    }

    pub async fn propose(&self, id: &str) -> Result<ProposalView> {
        send(self.http.post(self.url(&format!("/sessions/{id}/propose")))).await
    }

    pub async fn decide(&self, id: &str, decision: &Decision) -> Result<SessionView> {
        send(
            self.http
                .post(self.url(&format!("/sessions/{id}/decision")))
                .json(decision),
        )
        .await
    }

    pub async fn observe(&self, id: &str, psi: f64) -> Result<SessionView> {
        let body = ObservationRequest { psi };
        send(
            self.http
                .post(self.url(&format!("/sessions/{id}/observation")))
                .json(&body),
        )
        .await
    }

    /// Events from sequence number `from` on, then live ones as they are logged.
    pub async fn events(
        &self,
        id: &str,
        from: u64,
    ) -> Result<impl Stream<Item = Result<LoggedEvent>>> {
        let resp = self
            .http
            .get(self.url(&format!("/sessions/{id}/events?from={from}")))
            .send()
            .await?;
        let stream = checked(resp).await?.bytes_stream().eventsource();
        Ok(stream.map(|item| match item {
            Ok(ev) => Ok(serde_json::from_str(&ev.data)?),
            Err(e) => Err(ClientError::Stream(e.to_string())),
        }))
    }
}
