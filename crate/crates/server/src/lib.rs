//! HTTP service over one dataset and its checkpoint store.
//!
//! Routes live under `/api/v1`. Query endpoints are pure functions of the
//! dataset, the selected checkpoint and the decoded slice, and their bodies
//! are cached by path, resolved epoch and canonical query string. A single
//! background training job may replace the checkpoint store; checkpoints
//! become visible only once written to disk.

mod error;
mod query;
mod state;

use std::future::Future;
use std::path::{Path, PathBuf};

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use attnmap_core::attribution::{build_grid, select_events, tpartite_classes, Aggregation, GraphVariant, GridOptions};
use attnmap_core::export::{grid_json, tpartite_json, EXPORT_VERSION};
use attnmap_core::rnn::{RnnError, TrainConfig};

pub use error::ApiError;
pub use state::{AppState, JobStatus};

use query::Params;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error(transparent)]
    Model(#[from] RnnError),
}

type RawQuery = Result<Query<Vec<(String, String)>>, QueryRejection>;

fn params(query: RawQuery, allowed: &[&str]) -> Result<Params, ApiError> {
    let Query(pairs) = query.map_err(|e| ApiError::unprocessable("invalid_query", e.body_text()))?;
    Params::parse(pairs, allowed)
}

fn json_body(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn to_body(value: &Value) -> String {
    serde_json::to_string(value).expect("JSON values always serialize")
}

/// Runs blocking work off the async executor.
async fn blocking<T: Send + 'static>(
    work: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(work)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn schema(State(state): State<AppState>) -> Result<Response, ApiError> {
    let ds = state.dataset()?;
    let attributes: Vec<Value> = ds
        .schema()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut v = json!({"index": i, "name": a.name, "kind": a.kind, "levels": a.levels});
            if !a.bin_edges.is_empty() {
                v["bin_edges"] = json!(a.bin_edges);
            }
            v
        })
        .collect();
    let [pos, neg] = ds.class_counts();
    let body = json!({
        "v": EXPORT_VERSION,
        "attributes": attributes,
        "max_len": ds.max_len(),
        "instances": ds.len(),
        "classes": {"pos": pos, "neg": neg},
    });
    Ok(json_body(StatusCode::OK, to_body(&body)))
}

async fn train(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let config: TrainConfig = if body.iter().all(u8::is_ascii_whitespace) {
        TrainConfig::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::unprocessable("invalid_config", e.to_string()))?
    };
    let job_id = state.start_training(config)?;
    Ok(json_body(StatusCode::ACCEPTED, to_body(&json!({"job_id": job_id}))))
}

async fn train_status(State(state): State<AppState>) -> Response {
    let mut body = serde_json::to_value(state.job_status()).expect("status serializes");
    body["checkpoints"] = json!(state.checkpoints().iter().map(|c| c.epoch).collect::<Vec<_>>());
    json_body(StatusCode::OK, to_body(&body))
}

async fn checkpoints(State(state): State<AppState>) -> Response {
    let list: Vec<Value> = state
        .checkpoints()
        .iter()
        .map(|c| json!({"epoch": c.epoch, "seed": c.seed, "metrics": c.metrics}))
        .collect();
    json_body(
        StatusCode::OK,
        to_body(&json!({"v": EXPORT_VERSION, "checkpoints": list})),
    )
}

async fn grid(State(state): State<AppState>, query: RawQuery) -> Result<Response, ApiError> {
    let mut keys = query::SLICE_KEYS.to_vec();
    keys.push("agg");
    let params = params(query, &keys)?;
    let ds = state.dataset()?;
    let aggregation = match params.str("agg") {
        None | Some("sum") => Aggregation::Sum,
        Some("mean") => Aggregation::Mean,
        Some(other) => {
            return Err(ApiError::unprocessable(
                "invalid_parameter",
                format!("unknown aggregation `{other}`"),
            ));
        }
    };
    let slice = query::slice(&ds, &params)?;
    let checkpoint = state.checkpoint(slice.epoch)?;
    let key = format!("grid@{}?{}", checkpoint.epoch, params.canonical());
    let body = blocking(move || {
        state.cached(key, || {
            let records = state.attentions(&checkpoint)?;
            let grid = build_grid(&ds, &records, &slice, &GridOptions { aggregation })?;
            Ok(to_body(&grid_json(&grid, &ds)))
        })
    })
    .await?;
    Ok(json_body(StatusCode::OK, body.as_ref().clone()))
}

async fn tpartite(State(state): State<AppState>, query: RawQuery) -> Result<Response, ApiError> {
    let mut keys = query::SLICE_KEYS.to_vec();
    keys.extend(["attr", "attr2", "class"]);
    let params = params(query, &keys)?;
    let ds = state.dataset()?;
    let first = params
        .str("attr")
        .ok_or_else(|| ApiError::unprocessable("missing_parameter", "`attr` is required"))?;
    let first = query::attribute(&ds, first)?;
    let second = params.str("attr2").map(|a| query::attribute(&ds, a)).transpose()?;
    let classes = query::classes(params.str("class"))?;
    if second == Some(first) {
        return Err(ApiError::unprocessable(
            "same_attribute",
            "`attr` and `attr2` must differ",
        ));
    }
    let mut slice = query::slice(&ds, &params)?;
    if params.str("attrs").is_none() {
        slice.attributes = std::iter::once(first).chain(second).collect();
    }
    let checkpoint = state.checkpoint(slice.epoch)?;
    let key = format!("tpartite@{}?{}", checkpoint.epoch, params.canonical());
    let body = blocking(move || {
        state.cached(key, || {
            let records = state.attentions(&checkpoint)?;
            let selection = select_events(&ds, &records, &slice)?;
            let graphs = match second {
                None => classes
                    .iter()
                    .map(|c| tpartite_classes(&ds, &selection, GraphVariant::Single { attribute: first }, &[*c]))
                    .collect::<Result<Vec<_>, _>>()?,
                Some(secondary) => vec![tpartite_classes(
                    &ds,
                    &selection,
                    GraphVariant::Combined {
                        primary: first,
                        secondary,
                    },
                    &classes,
                )?],
            };
            Ok(to_body(&tpartite_json(&graphs, &slice, &ds)))
        })
    })
    .await?;
    Ok(json_body(StatusCode::OK, body.as_ref().clone()))
}

async fn attentions(State(state): State<AppState>, query: RawQuery) -> Result<Response, ApiError> {
    let params = params(query, &["epoch", "instance"])?;
    let ds = state.dataset()?;
    let checkpoint = state.checkpoint(params.get("epoch")?)?;
    let epoch = checkpoint.epoch;
    let normalization = state.normalization();
    let records = blocking(move || state.attentions(&checkpoint)).await?;
    let rows: Vec<Value> = records
        .iter()
        .zip(ds.instances())
        .filter(|(r, _)| params.str("instance").is_none_or(|id| id == r.id))
        .map(|(r, inst)| json!({"id": r.id, "label": inst.label, "raw": r.raw, "normalized": r.normalized}))
        .collect();
    if let (Some(id), true) = (params.str("instance"), rows.is_empty()) {
        return Err(ApiError::not_found(
            "unknown_instance",
            format!("unknown instance `{id}`"),
        ));
    }
    let body = json!({"v": EXPORT_VERSION, "epoch": epoch, "normalization": normalization, "instances": rows});
    Ok(json_body(StatusCode::OK, to_body(&body)))
}

async fn not_found() -> ApiError {
    ApiError::not_found("not_found", "no such endpoint")
}

/// API routes, with `static_dir` served for every other path when given.
pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/v1/schema", get(schema))
        .route("/api/v1/train", post(train))
        .route("/api/v1/train/status", get(train_status))
        .route("/api/v1/checkpoints", get(checkpoints))
        .route("/api/v1/grid", get(grid))
        .route("/api/v1/tpartite", get(tpartite))
        .route("/api/v1/attentions", get(attentions))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}

/// Serves `router` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    router: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router).with_graceful_shutdown(shutdown).await
}

/// Resolves on ctrl-c.
pub async fn ctrl_c() {
    if let Err(e) = tokio::signal::ctrl_c().await {
        log::error!("cannot listen for ctrl-c: {e}");
        std::future::pending::<()>().await;
    }
}
