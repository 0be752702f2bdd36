//! JSON bodies exchanged with the generation server.
//!
//! ```text
//! POST /generate        {sample_id, scene, description_tokens, seed}
//!                       -> 202 {job_id} | 429 {error:"overloaded"} | 400 {error, field}
//! GET  /result/{job_id} -> 200 {status:"completed", scene} | 202 {status:"pending"}
//!                        | 200 {status:"failed", reason}  | 404 {status:"unknown"}
//! GET  /healthz         -> 200 {uptime_ms, queue_depth, completed, failed}
//! ```

use serde::{Deserialize, Serialize};

use crate::env::Scene;

pub const OVERLOADED: &str = "overloaded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub sample_id: u64,
    pub scene: Scene,
    pub description_tokens: Vec<u32>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateAccepted {
    pub job_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobStatus {
    Completed { scene: Scene },
    Pending,
    Failed { reason: String },
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub uptime_ms: u64,
    pub queue_depth: usize,
    pub completed: u64,
    pub failed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_bodies_match_the_wire_contract() {
        assert_eq!(serde_json::to_string(&JobStatus::Pending).unwrap(), r#"{"status":"pending"}"#);
        assert_eq!(serde_json::to_string(&JobStatus::Unknown).unwrap(), r#"{"status":"unknown"}"#);
        assert_eq!(
            serde_json::to_string(&JobStatus::Failed { reason: "boom".into() }).unwrap(),
            r#"{"status":"failed","reason":"boom"}"#
        );
        let e = ErrorBody { error: OVERLOADED.into(), field: None };
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"{"error":"overloaded"}"#);
    }
}
