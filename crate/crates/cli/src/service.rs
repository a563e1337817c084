//! HTTP session service for live play.
//!
//! Sessions live in memory. Each one sits behind its own lock: moves and
//! finishes take it exclusively and fail fast with 409 when another request
//! holds it, reads share it.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;
use tomgrid::agent::ModelKind;
use tomgrid::grid::{Action, Cell, EnvState, GridConfig};
use tomgrid::inference::TraceRecord;
use tomgrid::planner::TableBank;
use tomgrid::session::{BeliefView, Session, SessionStatus};
use tomgrid::trajectory::{Outcome, Step};

pub struct AppState {
    bank: Arc<TableBank>,
    sessions: RwLock<HashMap<String, Arc<RwLock<Session>>>>,
    data_dir: Option<PathBuf>,
}

impl AppState {
    /// `bank` must hold every trial pair of its grid. Finished trajectories
    /// are written to `data_dir` when one is given.
    pub fn new(bank: Arc<TableBank>, data_dir: Option<PathBuf>) -> Self {
        AppState {
            bank,
            sessions: RwLock::new(HashMap::new()),
            data_dir,
        }
    }

    async fn session(&self, id: &str) -> Result<Arc<RwLock<Session>>, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
    }

    fn persist(&self, session: &mut Session) -> Result<Option<String>, ApiError> {
        let Some(dir) = &self.data_dir else {
            return Ok(None);
        };
        let path = dir.join(format!("{}.jsonl", session.id()));
        std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(&path, session.finish().to_jsonl_string()))
            .map_err(|e| {
                ApiError::new(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    format!("writing {}: {e}", path.display()),
                )
            })?;
        Ok(Some(path.display().to_string()))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(read))
        .route("/sessions/{id}/move", post(play))
        .route("/sessions/{id}/trace", get(trace))
        .route("/sessions/{id}/finish", post(finish))
        .with_state(state)
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    legal_actions: Option<Vec<Action>>,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        ApiError {
            status,
            error: error.into(),
            legal_actions: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

impl From<tomgrid::Error> for ApiError {
    fn from(e: tomgrid::Error) -> Self {
        use tomgrid::Error as E;
        let status = match &e {
            E::Finished(_) | E::NotActive(_) => StatusCode::CONFLICT,
            E::IllegalAction { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            E::Domain(_) | E::OutOfBounds(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

fn busy() -> ApiError {
    ApiError::new(
        StatusCode::CONFLICT,
        "another request is updating this session",
    )
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub condition: ModelKind,
    pub goal: Option<Cell>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Snapshot {
    id: String,
    condition: ModelKind,
    goal: Cell,
    seed: u64,
    grid: GridConfig,
    state: EnvState,
    status: SessionStatus,
    legal_actions: Vec<Action>,
    beliefs: BeliefView,
    steps: Vec<Step>,
}

fn snapshot(s: &Session) -> Result<Snapshot, ApiError> {
    Ok(Snapshot {
        id: s.id().to_string(),
        condition: s.condition(),
        goal: s.goal(),
        seed: s.seed(),
        grid: s.config().clone(),
        state: s.state(),
        status: s.status(),
        legal_actions: if s.status().is_active() {
            s.legal_actions()?
        } else {
            Vec::new()
        },
        beliefs: s.beliefs(),
        steps: s.trajectory().steps.clone(),
    })
}

async fn create(
    State(app): State<Arc<AppState>>,
    Json(req): Json<CreateRequest>,
) -> Result<(StatusCode, Json<Snapshot>), ApiError> {
    let seed = req.seed.unwrap_or_else(rand::random);
    let mut sessions = app.sessions.write().await;
    let id = loop {
        let id = format!("{:016x}", rand::random::<u64>());
        if !sessions.contains_key(&id) {
            break id;
        }
    };
    let session = Session::new(id.clone(), &app.bank, req.condition, req.goal, seed)?;
    let body = snapshot(&session)?;
    sessions.insert(id, Arc::new(RwLock::new(session)));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn read(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Snapshot>, ApiError> {
    let session = app.session(&id).await?;
    let s = session.read().await;
    Ok(Json(snapshot(&s)?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveRequest {
    pub action: Action,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MoveResponse {
    human_state: EnvState,
    agent_action: Option<Action>,
    state: EnvState,
    status: SessionStatus,
    legal_actions: Vec<Action>,
    beliefs: BeliefView,
}

async fn play(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<MoveRequest>,
) -> Result<Json<MoveResponse>, ApiError> {
    let session = app.session(&id).await?;
    let mut s = session.try_write().map_err(|_| busy())?;
    let turn = match s.play(&app.bank, req.action) {
        Ok(t) => t,
        Err(e @ tomgrid::Error::IllegalAction { .. }) => {
            let mut err = ApiError::from(e);
            err.legal_actions = Some(s.legal_actions()?);
            return Err(err);
        }
        Err(e) => return Err(e.into()),
    };
    if !turn.status.is_active() {
        app.persist(&mut s)?;
    }
    Ok(Json(MoveResponse {
        human_state: turn.human_state,
        agent_action: turn.agent_action,
        state: turn.state,
        status: turn.status,
        legal_actions: if turn.status.is_active() {
            s.legal_actions()?
        } else {
            Vec::new()
        },
        beliefs: s.beliefs(),
    }))
}

async fn trace(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Vec<TraceRecord>>, ApiError> {
    let session = app.session(&id).await?;
    let s = session.read().await;
    Ok(Json(s.trace_records()))
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FinishResponse {
    id: String,
    outcome: Outcome,
    success: bool,
    /// Where the record was written, when the service persists trajectories.
    path: Option<String>,
    /// The trajectory record file contents.
    record: String,
}

async fn finish(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<FinishResponse>, ApiError> {
    let session = app.session(&id).await?;
    let mut s = session.try_write().map_err(|_| busy())?;
    let record = s.finish().to_jsonl_string();
    let path = app.persist(&mut s)?;
    let meta = &s.trajectory().meta;
    Ok(Json(FinishResponse {
        id,
        outcome: meta.outcome,
        success: meta.is_success(),
        path,
        record,
    }))
}
