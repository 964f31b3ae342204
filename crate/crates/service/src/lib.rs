//! JSON-over-HTTP facade over the pipeline and case memory: ask a question,
//! inspect retrieval, inject or remove cases, browse KB neighbourhoods and
//! validate logical forms.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use cbrqa::kb::{Direction, Node, Value};
use cbrqa::linker::Mention;
use cbrqa::lf::parse;
use cbrqa::memory::{Case, NewCase, Provenance};
use cbrqa::pipeline::{Flags, Pipeline, PipelineResult};
use cbrqa::revise::ReviseMode;
use cbrqa::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const VERSION_HEADER: &str = "x-cbrqa-versions";

/// Shared session state. Pipeline components are immutable while serving;
/// only the case memory changes, under the write half of the lock.
pub struct Service {
    pipeline: RwLock<Pipeline>,
    flags: Flags,
    world_id: String,
    versions: String,
    persist: Option<PathBuf>,
    injected: AtomicU64,
    removed: AtomicU64,
}

impl Service {
    pub fn new(pipeline: Pipeline, flags: Flags, world_id: impl Into<String>) -> Self {
        let versions = format!(
            "encoder={};transe={}",
            pipeline.encoder.version(),
            pipeline.transe.as_ref().map_or("none", |t| t.version())
        );
        Service {
            pipeline: RwLock::new(pipeline),
            flags,
            world_id: world_id.into(),
            versions,
            persist: None,
            injected: AtomicU64::new(0),
            removed: AtomicU64::new(0),
        }
    }

    /// Snapshot the memory to `path` after every successful write.
    pub fn persist_to(mut self, path: impl Into<PathBuf>) -> Self {
        self.persist = Some(path.into());
        self
    }

    fn read(&self) -> RwLockReadGuard<'_, Pipeline> {
        self.pipeline.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, Pipeline> {
        self.pipeline.write().unwrap_or_else(|e| e.into_inner())
    }

    /// Serialized case memory, taken under the read lock.
    pub fn memory_bytes(&self) -> cbrqa::Result<Vec<u8>> {
        self.read().memory.to_bytes()
    }

    pub fn versions(&self) -> &str {
        &self.versions
    }
}

/// Error envelope `{code, message, detail}` with its HTTP status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    detail: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            detail: serde_json::Value::Null,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = detail;
        self
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Syntax { offset, .. } | Error::Unsupported { offset, .. } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_lf", message).detail(json!({ "offset": offset }))
            }
            Error::InvalidLogicalForm(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_lf", message),
            Error::UnknownCase(id) => ApiError::new(StatusCode::NOT_FOUND, "not_found", message).detail(json!({ "id": id })),
            Error::DuplicateCase(id) => ApiError::new(StatusCode::CONFLICT, "conflict", message).detail(json!({ "id": id })),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize, Serialize)]
pub struct QueryRequest {
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revise: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mentions: Option<Vec<Mention>>,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct InjectRequest {
    pub question: String,
    pub sparql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mentions: Option<Vec<Mention>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct InjectResponse {
    pub id: String,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct RemoveResponse {
    pub removed: String,
}

#[derive(Debug, Deserialize)]
pub struct ProbeParams {
    pub query: String,
    pub k: Option<usize>,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct CaseHit {
    pub id: String,
    pub question: String,
    pub sparql: String,
    pub similarity: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct ProbeResponse {
    pub query: String,
    pub k: usize,
    pub mentions: Vec<Mention>,
    pub cases: Vec<CaseHit>,
}

#[derive(Debug, Deserialize)]
pub struct NeighborhoodParams {
    pub direction: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct EdgeJson {
    pub relation: String,
    pub neighbor: Value,
    pub direction: String,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct NeighborhoodResponse {
    pub entity: String,
    pub direction: String,
    pub edges: Vec<EdgeJson>,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct ValidateRequest {
    pub sparql: String,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct ValidateResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/query", post(query))
        .route("/cases", post(inject).get(probe))
        .route("/cases/{id}", delete(remove))
        .route("/kb/neighborhood/{entity}", get(neighborhood))
        .route("/lf/validate", post(validate))
        .route("/meta", get(meta))
        .layer(middleware::from_fn_with_state(service.clone(), stamp_versions))
        .with_state(service)
}

async fn stamp_versions(State(service): State<Arc<Service>>, request: Request, next: Next) -> Response {
    let mut response = next.run(request).await;
    if let Ok(v) = HeaderValue::from_str(&service.versions) {
        response.headers_mut().insert(VERSION_HEADER, v);
    }
    response
}

async fn query(
    State(service): State<Arc<Service>>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> ApiResult<PipelineResult> {
    let Json(req) = body?;
    if req.question.trim().is_empty() {
        return Err(ApiError::bad_request("question is empty"));
    }
    let mut flags = service.flags.clone();
    if let Some(k) = req.k {
        flags.k = k;
    }
    if let Some(r) = &req.revise {
        flags.revise = ReviseMode::parse(r).ok_or_else(|| {
            ApiError::bad_request(format!("revise must be off, surface or transe, got {r:?}"))
        })?;
    }
    if let Some(b) = req.beam {
        if b == 0 {
            return Err(ApiError::bad_request("beam must be at least 1"));
        }
        flags.generator.beam = b;
        flags.revise_beam = b;
    }
    let result = tokio::task::spawn_blocking(move || {
        let pipeline = service.read();
        match req.mentions {
            Some(m) => pipeline.answer_with_mentions(&req.question, m, &flags),
            None => pipeline.answer(&req.question, &flags),
        }
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(result))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

async fn inject(
    State(service): State<Arc<Service>>,
    body: Result<Json<InjectRequest>, JsonRejection>,
) -> ApiResult<InjectResponse> {
    let Json(req) = body?;
    if req.question.trim().is_empty() {
        return Err(ApiError::bad_request("question is empty"));
    }
    // Parse before taking the lock so invalid cases never wait on writers.
    parse(&req.sparql)?;
    let mut pipeline = service.write();
    let mentions = match req.mentions {
        Some(m) => m,
        None => pipeline.aliases.link(&req.question),
    };
    let Pipeline { memory, encoder, .. } = &mut *pipeline;
    let id = memory.inject(
        NewCase {
            id: req.id,
            question: &req.question,
            lf_text: &req.sparql,
            mentions,
            provenance: Provenance::Injected {
                author: req.author.unwrap_or_else(|| "api".into()),
                timestamp: now(),
            },
        },
        encoder,
    )?;
    if let Some(path) = &service.persist {
        pipeline.memory.snapshot(path)?;
    }
    service.injected.fetch_add(1, Ordering::Relaxed);
    Ok(Json(InjectResponse { id }))
}

async fn remove(State(service): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<RemoveResponse> {
    let mut pipeline = service.write();
    let case = pipeline.memory.remove(&id)?;
    if let Some(path) = &service.persist {
        pipeline.memory.snapshot(path)?;
    }
    service.removed.fetch_add(1, Ordering::Relaxed);
    Ok(Json(RemoveResponse { removed: case.id }))
}

fn hit(case: &Case, similarity: f64) -> CaseHit {
    CaseHit {
        id: case.id.clone(),
        question: case.question.clone(),
        sparql: case.lf.print(),
        similarity,
        provenance: case.provenance.clone(),
    }
}

async fn probe(
    State(service): State<Arc<Service>>,
    params: Result<Query<ProbeParams>, QueryRejection>,
) -> ApiResult<ProbeResponse> {
    let Query(p) = params?;
    let k = p.k.unwrap_or(service.flags.k);
    let pipeline = service.read();
    let mentions = pipeline.aliases.link(&p.query);
    let cases = pipeline
        .memory
        .retrieve(&pipeline.encoder, &p.query, &mentions, k, None)?
        .into_iter()
        .map(|(c, s)| hit(c, s))
        .collect();
    Ok(Json(ProbeResponse {
        query: p.query,
        k,
        mentions,
        cases,
    }))
}

fn direction_name(d: Direction) -> &'static str {
    match d {
        Direction::Out => "out",
        Direction::In => "in",
        Direction::Both => "both",
    }
}

async fn neighborhood(
    State(service): State<Arc<Service>>,
    Path(entity): Path<String>,
    params: Result<Query<NeighborhoodParams>, QueryRejection>,
) -> ApiResult<NeighborhoodResponse> {
    let Query(p) = params?;
    let direction = match p.direction.as_deref() {
        None => Direction::Both,
        Some(d) => Direction::parse(d).ok_or_else(|| ApiError::bad_request(format!("direction must be out, in or both, got {d:?}")))?,
    };
    let pipeline = service.read();
    let kb = &pipeline.kb;
    let Some(id) = kb.entity(&entity) else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown entity {entity}")).detail(json!({ "entity": entity })));
    };
    let edges = kb
        .neighborhood(id, direction)
        .into_iter()
        .map(|e| EdgeJson {
            relation: kb.relation_name(e.relation).to_string(),
            neighbor: kb.value(e.neighbor),
            direction: direction_name(e.direction).into(),
        })
        .collect();
    Ok(Json(NeighborhoodResponse {
        entity,
        direction: direction_name(direction).into(),
        edges,
    }))
}

async fn validate(body: Result<Json<ValidateRequest>, JsonRejection>) -> ApiResult<ValidateResponse> {
    let Json(req) = body?;
    Ok(Json(match parse(&req.sparql) {
        Ok(lf) => ValidateResponse {
            ok: true,
            sparql: Some(lf.print()),
            error: None,
            offset: None,
        },
        Err(e) => {
            let offset = match &e {
                Error::Syntax { offset, .. } | Error::Unsupported { offset, .. } => Some(*offset),
                _ => None,
            };
            ValidateResponse {
                ok: false,
                sparql: None,
                error: Some(e.to_string()),
                offset,
            }
        }
    }))
}

async fn meta(State(service): State<Arc<Service>>) -> Json<serde_json::Value> {
    let pipeline = service.read();
    let injected = pipeline
        .memory
        .cases()
        .iter()
        .filter(|c| matches!(c.provenance, Provenance::Injected { .. }))
        .count();
    let literals = pipeline
        .kb
        .triples()
        .iter()
        .filter(|t| matches!(t.object, Node::Literal(_)))
        .count();
    Json(json!({
        "world_id": service.world_id,
        "versions": {
            "encoder": pipeline.encoder.version(),
            "memory_encoder": pipeline.memory.encoder_version(),
            "transe": pipeline.transe.as_ref().map(|t| t.version()),
        },
        "counts": {
            "cases": pipeline.memory.len(),
            "injected_cases": injected,
            "kb_triples": pipeline.kb.len(),
            "kb_literal_triples": literals,
            "entities": pipeline.kb.num_entities(),
            "relations": pipeline.kb.num_relations(),
            "writes": {
                "injected": service.injected.load(Ordering::Relaxed),
                "removed": service.removed.load(Ordering::Relaxed),
            },
        },
        "config": service.flags,
    }))
}

/// Serves on `listener` until the process is stopped.
pub async fn serve(service: Arc<Service>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}
