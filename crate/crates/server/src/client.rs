//! Blocking HTTP client for the generation server.

use std::time::Duration;

use thiserror::Error;
use ureq::Agent;

use syngrpo_core::protocol::{ErrorBody, GenerateAccepted, GenerateRequest, Health, JobStatus};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("server unreachable: {0}")]
    Transport(String),
    #[error("request rejected ({field}): {error}")]
    Rejected { error: String, field: String },
    #[error("unexpected reply: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Submitted {
    Accepted(String),
    Overloaded,
}

#[derive(Clone)]
pub struct Client {
    agent: Agent,
    base: String,
}

impl Client {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            // no resolve timeout: with one set, ureq spawns a thread per
            // request to run the lookup
            .timeout_connect(Some(timeout))
            .timeout_send_request(Some(timeout))
            .timeout_send_body(Some(timeout))
            .timeout_recv_response(Some(timeout))
            .timeout_recv_body(Some(timeout))
            .build()
            .into();
        Client { agent, base: base_url.trim_end_matches('/').to_string() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn submit(&self, req: &GenerateRequest) -> Result<Submitted, ClientError> {
        let mut resp = self
            .agent
            .post(format!("{}/generate", self.base))
            .send_json(req)
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut();
        match status {
            202 => {
                let a: GenerateAccepted = body.read_json().map_err(|e| ClientError::Protocol(e.to_string()))?;
                Ok(Submitted::Accepted(a.job_id))
            }
            429 => Ok(Submitted::Overloaded),
            400 => {
                let e: ErrorBody = body.read_json().map_err(|e| ClientError::Protocol(e.to_string()))?;
                Err(ClientError::Rejected { error: e.error, field: e.field.unwrap_or_default() })
            }
            code => Err(ClientError::Protocol(format!("status {code} from /generate"))),
        }
    }

    pub fn poll(&self, job_id: &str) -> Result<JobStatus, ClientError> {
        let mut resp = self
            .agent
            .get(format!("{}/result/{job_id}", self.base))
            .call()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        match resp.status().as_u16() {
            200 | 202 | 404 => resp.body_mut().read_json().map_err(|e| ClientError::Protocol(e.to_string())),
            code => Err(ClientError::Protocol(format!("status {code} from /result"))),
        }
    }

    pub fn health(&self) -> Result<Health, ClientError> {
        let mut resp = self
            .agent
            .get(format!("{}/healthz", self.base))
            .call()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if resp.status().as_u16() != 200 {
            return Err(ClientError::Protocol(format!("status {} from /healthz", resp.status())));
        }
        resp.body_mut().read_json().map_err(|e| ClientError::Protocol(e.to_string()))
    }
}
