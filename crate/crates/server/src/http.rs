use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use crate::backend::JobInput;
use crate::jobs::{JobTable, Submit};
use syngrpo_core::protocol::{ErrorBody, GenerateAccepted, GenerateRequest, JobStatus, OVERLOADED};

pub(crate) fn router(table: Arc<JobTable>) -> Router {
    Router::new()
        .route("/generate", post(generate))
        .route("/result/{job_id}", get(result))
        .route("/healthz", get(healthz))
        .with_state(table)
}

fn bad_request(error: String, field: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(ErrorBody { error, field: Some(field) })).into_response()
}

async fn generate(State(table): State<Arc<JobTable>>, body: Bytes) -> Response {
    let de = &mut serde_json::Deserializer::from_slice(&body);
    let req: GenerateRequest = match serde_path_to_error::deserialize(de) {
        Ok(r) => r,
        Err(e) => {
            let path = e.path().to_string();
            return bad_request(e.into_inner().to_string(), path);
        }
    };
    if let Err(fe) = req.scene.validate() {
        return bad_request(fe.message, format!("scene.{}", fe.field));
    }
    let input = JobInput {
        sample_id: req.sample_id,
        scene: req.scene,
        description_tokens: req.description_tokens,
        seed: req.seed,
    };
    match table.submit(input) {
        Submit::Accepted(job_id) => (StatusCode::ACCEPTED, Json(GenerateAccepted { job_id })).into_response(),
        Submit::Overloaded => {
            (StatusCode::TOO_MANY_REQUESTS, Json(ErrorBody { error: OVERLOADED.into(), field: None })).into_response()
        }
    }
}

async fn result(State(table): State<Arc<JobTable>>, Path(job_id): Path<String>) -> Response {
    let status = table.status(&job_id);
    let code = match status {
        JobStatus::Completed { .. } | JobStatus::Failed { .. } => StatusCode::OK,
        JobStatus::Pending => StatusCode::ACCEPTED,
        JobStatus::Unknown => StatusCode::NOT_FOUND,
    };
    (code, Json(status)).into_response()
}

async fn healthz(State(table): State<Arc<JobTable>>) -> Response {
    Json(table.health()).into_response()
}
