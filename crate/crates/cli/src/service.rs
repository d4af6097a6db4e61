//! HTTP JSON facade over a [`SessionState`]. Every route is a read-only GET.
//!
//! Errors always come back as `{"error": {"code", "message"}}` with a status
//! matching the code.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::Serialize;
use serde_json::{json, Value};

use cnndiff_core::diff::{kernel_slice, locate_bucket, DEFAULT_BINS, DEFAULT_LEVELS};
use cnndiff_core::image::{crop, encode_png};
use cnndiff_core::{blob_diff, Error, LayerKind};

use crate::session::{ImageLookup, SessionState, Snapshot};

type Shared = Arc<SessionState>;
type Params = Query<HashMap<String, String>>;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownLayer(_) => StatusCode::NOT_FOUND,
            Error::Validation(_) | Error::OutOfRange(_) | Error::Shape(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::NoParams(_)
            | Error::Decode(_)
            | Error::UnsupportedFormat(_)
            | Error::ImageTooSmall { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T = Json<Value>> = Result<T, ApiError>;

fn image_error(id: &str, e: ImageLookup) -> ApiError {
    match e {
        ImageLookup::NotFound => ApiError::not_found(format!("no image `{id}` in the catalog")),
        ImageLookup::Failed(e) => e.into(),
    }
}

/// Optional typed query parameter.
fn param<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> ApiResult<Option<T>> {
    q.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| ApiError::bad_request(format!("cannot parse `{key}={v}`")))
        })
        .transpose()
}

fn required<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> ApiResult<T> {
    param(q, key)?.ok_or_else(|| ApiError::bad_request(format!("missing query parameter `{key}`")))
}

fn snapshot(q: &HashMap<String, String>) -> ApiResult<Snapshot> {
    let s: String = required(q, "snapshot")?;
    Snapshot::parse(&s)
        .ok_or_else(|| ApiError::bad_request(format!("snapshot must be `a` or `b`, got `{s}`")))
}

/// Runs CPU-heavy work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal_error",
            e.to_string(),
        )
    })?
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/model", get(model))
        .route("/api/layers", get(layers))
        .route("/api/layers/{name}/histogram", get(histogram))
        .route("/api/layers/{name}/bucket", get(bucket))
        .route("/api/layers/{name}/pixelmap", get(pixelmap))
        .route("/api/layers/{name}/kernel", get(kernel))
        .route("/api/layers/{name}/blobdiff", get(blobdiff))
        .route("/api/layers/{name}/patches", get(patches))
        .route("/api/images", get(images))
        .route("/api/classify", get(classify))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

async fn model(State(s): State<Shared>) -> ApiResult {
    let (height, width, channels) = s.arch.input_dims()?;
    Ok(Json(json!({
        "arch_hash": s.a.arch_hash,
        "layers": s.arch.layers,
        "epochs": { "a": s.a.epoch, "b": s.b.epoch },
        "param_count": s.arch.param_count()?,
        "input": { "height": height, "width": width, "channels": channels },
        "classes": s.class_names(),
    })))
}

#[derive(Serialize)]
struct LayerEntry<'a> {
    index: usize,
    name: &'a str,
    kind: &'static str,
    output_shape: Vec<usize>,
    summary: Option<&'a cnndiff_core::LayerDiffSummary>,
}

async fn layers(State(s): State<Shared>) -> ApiResult {
    let entries: Vec<LayerEntry> = s
        .arch
        .layers
        .iter()
        .zip(&s.shapes)
        .enumerate()
        .map(|(index, (l, (_, shape)))| LayerEntry {
            index,
            name: &l.name,
            kind: l.kind.name(),
            output_shape: shape.dims(),
            summary: s.summaries.get(&l.name),
        })
        .collect();
    Ok(Json(json!(entries)))
}

async fn histogram(
    State(s): State<Shared>,
    Path(name): Path<String>,
    Query(q): Params,
) -> ApiResult {
    let bins = param(&q, "bins")?.unwrap_or(DEFAULT_BINS);
    let levels = param(&q, "levels")?.unwrap_or(DEFAULT_LEVELS);
    Ok(Json(json!(s.histogram(&name, bins, levels)?)))
}

async fn bucket(State(s): State<Shared>, Path(name): Path<String>, Query(q): Params) -> ApiResult {
    let bins = param(&q, "bins")?.unwrap_or(DEFAULT_BINS);
    let levels = param(&q, "levels")?.unwrap_or(DEFAULT_LEVELS);
    let bin: usize = required(&q, "bin")?;
    let level: usize = required(&q, "level")?;
    let (_, kind) = s.layer(&name)?;
    if !kind.has_params() {
        return Err(Error::NoParams(name).into());
    }
    let coords = locate_bucket(&s.a, &s.b, &name, bins, levels, bin, level)?;
    Ok(Json(json!({
        "layer": name,
        "bin": bin,
        "level": level,
        "coordinates": coords,
    })))
}

async fn pixelmap(State(s): State<Shared>, Path(name): Path<String>) -> ApiResult {
    Ok(Json(json!(s.pixel_map(&name)?)))
}

async fn kernel(State(s): State<Shared>, Path(name): Path<String>, Query(q): Params) -> ApiResult {
    let oc: usize = required(&q, "oc")?;
    let ic: usize = required(&q, "ic")?;
    let snap = snapshot(&q)?;
    s.pixel_map(&name)?;
    let ckpt = s.checkpoint(snap);
    Ok(Json(json!({
        "layer": name,
        "oc": oc,
        "ic": ic,
        "snapshot": snap.id(),
        "epoch": ckpt.epoch,
        "values": kernel_slice(ckpt, &name, oc, ic)?,
    })))
}

async fn images(State(s): State<Shared>) -> ApiResult {
    let ids: Vec<&str> = s.image_ids().collect();
    Ok(Json(json!(ids)))
}

async fn classify(State(s): State<Shared>, Query(q): Params) -> ApiResult {
    let id: String = required(&q, "image")?;
    blocking(move || {
        let pair = s.traces(&id).map_err(|e| image_error(&id, e))?;
        let entry = |t: &cnndiff_core::ForwardTrace, c: &cnndiff_core::Checkpoint| {
            json!({
                "epoch": c.epoch,
                "probabilities": t.probabilities.data(),
                "predicted": t.predicted(),
            })
        };
        Ok(Json(json!({
            "image": id,
            "classes": s.class_names(),
            "a": entry(&pair.0, &s.a),
            "b": entry(&pair.1, &s.b),
        })))
    })
    .await
}

async fn blobdiff(
    State(s): State<Shared>,
    Path(name): Path<String>,
    Query(q): Params,
) -> ApiResult {
    let id: String = required(&q, "image")?;
    let (index, _) = s.layer(&name)?;
    blocking(move || {
        let pair = s.traces(&id).map_err(|e| image_error(&id, e))?;
        let output = blob_diff(&pair.0, &pair.1, &name)?;
        // the blob feeding this layer, for the input strip
        let input = match index.checked_sub(1) {
            Some(prev) => Some(blob_diff(&pair.0, &pair.1, &s.arch.layers[prev].name)?),
            None => None,
        };
        Ok(Json(json!({
            "layer": name,
            "image": id,
            "input": input,
            "output": output,
        })))
    })
    .await
}

async fn patches(State(s): State<Shared>, Path(name): Path<String>, Query(q): Params) -> ApiResult {
    let id: String = required(&q, "image")?;
    let channel: usize = required(&q, "channel")?;
    let snap = snapshot(&q)?;
    let k: usize = param(&q, "k")?.unwrap_or(5);
    if k == 0 {
        return Err(ApiError::from(Error::Validation("k must be ≥ 1".into())));
    }
    let (_, kind) = s.layer(&name)?;
    if !matches!(kind, LayerKind::Conv { .. }) {
        return Err(Error::Validation(format!("`{name}` is not a conv layer")).into());
    }
    blocking(move || {
        let (image, ranked) = s
            .ranking(&id, &name, channel, snap)
            .map_err(|e| image_error(&id, e))?;
        let mut out = Vec::with_capacity(k.min(ranked.len()));
        for r in ranked.iter().take(k) {
            let p = r.proposal;
            let png = encode_png(&crop(&image.pixels, p.x, p.y, p.w, p.h)?)?;
            out.push(json!({
                "rank": r.rank,
                "score": r.score,
                "box": { "x": p.x, "y": p.y, "w": p.w, "h": p.h },
                "png_base64": BASE64.encode(png),
            }));
        }
        Ok(Json(json!({
            "layer": name,
            "image": id,
            "channel": channel,
            "snapshot": snap.id(),
            "epoch": s.checkpoint(snap).epoch,
            "patches": out,
        })))
    })
    .await
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: SessionState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await
}
