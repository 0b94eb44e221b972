//! HTTP routes. All state is read-only after load; what-if is pure.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use readmit_core::card::RiskTier;

use crate::store::{Store, WhatIfError};

pub const PAGE_SIZE: usize = 20;

/// Shared handle; empty until loading finishes.
#[derive(Clone, Default)]
pub struct AppState {
    store: Arc<OnceLock<Store>>,
}

impl AppState {
    pub fn loaded(store: Store) -> Self {
        let s = AppState::default();
        s.set(store);
        s
    }

    /// Publishes the store. Later calls are ignored.
    pub fn set(&self, store: Store) {
        let _ = self.store.set(store);
    }

    fn get(&self) -> Result<&Store, ApiError> {
        self.store.get().ok_or(ApiError::NotReady)
    }
}

#[derive(Debug)]
enum ApiError {
    NotReady,
    NotFound(String),
    Unprocessable(String),
    BadRequest(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, message) = match self {
            ApiError::NotReady => (StatusCode::SERVICE_UNAVAILABLE, "not_ready", "cards are still loading".to_string()),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "not_found", m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, "unprocessable", m),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "bad_request", m),
        };
        (status, Json(json!({ "error": kind, "message": message }))).into_response()
    }
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/patients", get(list_patients))
        .route("/patients/:id/card", get(get_card))
        .route("/whatif", post(what_if))
        .route("/model/metrics", get(model_metrics))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ListQuery {
    sort: Option<String>,
    page: Option<usize>,
}

#[derive(Serialize)]
struct PatientRow {
    encounter_id: u64,
    risk_score: f64,
    tier: RiskTier,
}

#[derive(Serialize)]
struct PatientPage {
    sort: &'static str,
    page: usize,
    page_size: usize,
    total: usize,
    patients: Vec<PatientRow>,
}

async fn list_patients(State(st): State<AppState>, Query(q): Query<ListQuery>) -> Result<Json<PatientPage>, ApiError> {
    let store = st.get()?;
    let page = q.page.unwrap_or(1);
    if page == 0 {
        return Err(ApiError::BadRequest("page numbers start at 1".into()));
    }
    let sort = match q.sort.as_deref().unwrap_or("score") {
        "score" => "score",
        "id" => "id",
        other => return Err(ApiError::BadRequest(format!("sort must be score or id, not {other:?}"))),
    };
    let rows: Box<dyn Iterator<Item = _>> = if sort == "score" {
        Box::new(store.by_score())
    } else {
        Box::new(store.by_id())
    };
    let patients = rows
        .skip((page - 1).saturating_mul(PAGE_SIZE))
        .take(PAGE_SIZE)
        .map(|c| PatientRow {
            encounter_id: c.card.encounter_id,
            risk_score: c.card.risk_score,
            tier: c.card.tier,
        })
        .collect();
    Ok(Json(PatientPage {
        sort,
        page,
        page_size: PAGE_SIZE,
        total: store.len(),
        patients,
    }))
}

fn json_text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn get_card(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let store = st.get()?;
    let found = id.parse::<u64>().ok().and_then(|id| store.card(id));
    match found {
        Some(c) => Ok(json_text(c.raw.clone())),
        None => Err(ApiError::NotFound(format!("no card for encounter {id}"))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WhatIfRequest {
    encounter_id: u64,
    #[serde(default)]
    overrides: BTreeMap<String, f64>,
}

async fn what_if(State(st): State<AppState>, Json(req): Json<WhatIfRequest>) -> Result<Response, ApiError> {
    let store = st.get()?;
    match store.what_if(req.encounter_id, &req.overrides) {
        Ok(r) => Ok(Json(r).into_response()),
        Err(WhatIfError::UnknownEncounter(id)) => Err(ApiError::NotFound(format!("no stored encounter {id}"))),
        Err(WhatIfError::UnknownFeature(names)) => {
            Err(ApiError::Unprocessable(format!("unknown feature: {}", names.join(", "))))
        }
        Err(WhatIfError::BadValue(m)) => Err(ApiError::Unprocessable(m)),
    }
}

async fn model_metrics(State(st): State<AppState>) -> Result<Response, ApiError> {
    let store = st.get()?;
    match store.metrics() {
        Some(m) => Ok(json_text(m.to_string())),
        None => Err(ApiError::NotFound("the model has not been evaluated".into())),
    }
}
