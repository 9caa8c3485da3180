//! JSON HTTP API.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/lemmas?q=&limit=` | lemma prefix completions |
//! | GET | `/api/synsets/{id}` | one synset |
//! | GET | `/api/images/{id}` | one image record |
//! | POST | `/api/images` | create an image |
//! | POST | `/api/images/{id}/annotations` | rate a sense; annotator from `X-Annotator-Id` |
//! | GET | `/api/images/{id}/agreement` | Fleiss kappa report |
//! | GET | `/api/search?q=&d_max=&limit=&val_min=&val_max=&ar_min=&ar_max=&dom_min=&dom_max=&keyword=` | ranked search |
//! | GET | `/api/stats/tags` | tag count statistics |
//! | POST | `/api/admin/rebuild-sim` | rebuild the similarity table |
//!
//! Errors are `{"error": {"code", "message"}}` with the status from
//! [`ServiceError::status_code`]. The annotator header is trusted as given;
//! run this only on a trusted network.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use wntags_core::corpus::EmotionRating;
use wntags_core::retrieval::{AffectFilter, AffectRange};

use crate::engine::{Engine, SearchRequest};
use crate::error::ServiceError;

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";
const DEFAULT_COMPLETIONS: usize = 20;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, _) = self.status_code();
        if status >= 500 {
            tracing::error!(error = %self, "request failed");
        }
        let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

type ApiResult = Result<Response, ServiceError>;

fn ok<T: serde::Serialize>(value: T) -> ApiResult {
    Ok(Json(value).into_response())
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/api/lemmas", get(lemmas))
        .route("/api/synsets/{id}", get(synset))
        .route("/api/images", post(create_image))
        .route("/api/images/{id}", get(image))
        .route("/api/images/{id}/annotations", post(annotate))
        .route("/api/images/{id}/agreement", get(agreement))
        .route("/api/search", get(search))
        .route("/api/stats/tags", get(tag_stats))
        .route("/api/admin/rebuild-sim", post(rebuild_sim))
        .with_state(engine)
}

type Params = Result<Query<HashMap<String, String>>, QueryRejection>;

fn params(p: Params) -> Result<HashMap<String, String>, ServiceError> {
    p.map(|Query(m)| m).map_err(|e| ServiceError::BadRequest(e.body_text()))
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    body.map(|Json(v)| v).map_err(|e| ServiceError::BadRequest(e.body_text()))
}

fn parse_opt<T: std::str::FromStr>(p: &HashMap<String, String>, key: &str) -> Result<Option<T>, ServiceError> {
    match p.get(key).map(|v| v.trim()).filter(|v| !v.is_empty()) {
        None => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|_| ServiceError::BadRequest(format!("invalid value {v:?} for {key}"))),
    }
}

fn range(p: &HashMap<String, String>, prefix: &str) -> Result<Option<AffectRange>, ServiceError> {
    let lo: Option<f64> = parse_opt(p, &format!("{prefix}_min"))?;
    let hi: Option<f64> = parse_opt(p, &format!("{prefix}_max"))?;
    Ok(match (lo, hi) {
        (None, None) => None,
        (lo, hi) => Some(AffectRange { lo: lo.unwrap_or(EmotionRating::MIN), hi: hi.unwrap_or(EmotionRating::MAX) }),
    })
}

async fn lemmas(State(engine): State<Arc<Engine>>, p: Params) -> ApiResult {
    let p = params(p)?;
    let limit = parse_opt(&p, "limit")?.unwrap_or(DEFAULT_COMPLETIONS);
    ok(engine.lemmas(p.get("q").map_or("", String::as_str), limit))
}

async fn synset(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult {
    ok(engine.synset(&id)?)
}

async fn image(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult {
    ok(engine.image(&id)?)
}

#[derive(Deserialize)]
struct EmotionBody {
    val: f64,
    ar: f64,
    dom: f64,
}

#[derive(Deserialize)]
struct NewImage {
    id: String,
    #[serde(default)]
    source_ref: String,
    #[serde(default)]
    iaps_keyword: String,
    emotion: EmotionBody,
}

async fn create_image(State(engine): State<Arc<Engine>>, body: Result<Json<NewImage>, JsonRejection>) -> ApiResult {
    let b = json_body(body)?;
    let emotion = EmotionRating::new(b.emotion.val, b.emotion.ar, b.emotion.dom)?;
    let view = engine.add_image(&b.id, &b.source_ref, &b.iaps_keyword, emotion)?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

#[derive(Deserialize)]
struct NewAnnotation {
    synset: String,
    lemma: String,
    weight: f64,
}

async fn annotate(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<NewAnnotation>, JsonRejection>,
) -> ApiResult {
    let annotator = headers
        .get(ANNOTATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or(ServiceError::MissingAnnotator)?
        .to_owned();
    let b = json_body(body)?;
    ok(engine.annotate(&id, &annotator, &b.synset, &b.lemma, b.weight)?)
}

async fn agreement(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult {
    ok(engine.agreement(&id)?)
}

async fn search(State(engine): State<Arc<Engine>>, p: Params) -> ApiResult {
    let p = params(p)?;
    let req = SearchRequest {
        q: p.get("q").cloned(),
        d_max: parse_opt(&p, "d_max")?,
        limit: parse_opt(&p, "limit")?,
        filter: AffectFilter { valence: range(&p, "val")?, arousal: range(&p, "ar")?, dominance: range(&p, "dom")? },
        keyword: p.get("keyword").cloned(),
    };
    ok(engine.search(&req)?)
}

async fn tag_stats(State(engine): State<Arc<Engine>>) -> ApiResult {
    ok(engine.tag_stats()?)
}

async fn rebuild_sim(State(engine): State<Arc<Engine>>) -> ApiResult {
    let engine = engine.clone();
    let summary = tokio::task::spawn_blocking(move || engine.rebuild_sim())
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e.to_string())))??;
    ok(summary)
}
