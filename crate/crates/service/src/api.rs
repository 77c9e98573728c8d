//! REST and websocket endpoints.

use std::path::PathBuf;
use std::sync::Arc;

use arcal_core::geometry::{box_from_corners, DEFAULT_HEIGHT_THRESHOLD};
use arcal_core::label::FieldError;
use arcal_core::ply::parse_ply;
use arcal_core::transform::{calibrate_ar_to_map, TransformJson};
use arcal_core::{CornerTriple, Label, Point3, RigidTransform};
use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;
use tower_http::services::{ServeDir, ServeFile};

use crate::queue::{InferenceQueue, QueueError, Timed};
use crate::store::{CloudRecord, Store, StoreError};

pub const DEFAULT_MAX_UPLOAD: usize = 64 * 1024 * 1024;
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;

const FALLBACK_INDEX: &str = include_str!("../static/index.html");

pub struct AppState {
    pub store: Store,
    /// `None` when no model is loaded.
    pub queue: Option<InferenceQueue>,
    pub events: broadcast::Sender<String>,
    pub score_threshold: f64,
}

pub type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": msg.into() }),
        }
    }

    fn with(mut self, key: &str, v: Value) -> Self {
        self.body[key] = v;
        self
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} {id} not found"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        log::error!("storage: {e}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn core_error(e: arcal_core::Error) -> ApiError {
    use arcal_core::Error as E;
    match e {
        E::DegenerateCorners(d) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "degenerate corners").with("detail", json!(d)),
        e @ E::NotOrthogonal { .. } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "degenerate corners").with("detail", json!(e.to_string())),
        E::EmptyObject => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "empty object"),
        e @ (E::Validation(_) | E::Structural(_)) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        e => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

fn json_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid request body: {e}")))
}

pub fn router(state: Shared, ui_dir: Option<PathBuf>, max_upload: usize) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/clouds", post(upload).get(list))
        .route("/clouds/{id}", get(cloud_points))
        .route("/detect", post(detect))
        .route("/annotate/box", post(annotate))
        .route("/labels/{id}", put(put_label).get(get_label).delete(delete_label))
        .route("/calibrate", post(calibrate))
        .route("/events", get(events))
        .route("/schemas/{name}", get(schema))
        .layer(DefaultBodyLimit::max(max_upload))
        .with_state(state);
    match ui_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            api.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)))
        }
        None => api.fallback(get(|| async { ([(header::CONTENT_TYPE, "text/html; charset=utf-8")], FALLBACK_INDEX) })),
    }
}

async fn health(State(s): State<Shared>) -> Json<Value> {
    Json(json!({ "status": "ok", "model_loaded": s.queue.is_some(), "clouds": s.store.list().len() }))
}

async fn upload(State(s): State<Shared>, body: Bytes) -> ApiResult<Json<Value>> {
    let cloud = parse_ply(&body).map_err(|e| match e {
        arcal_core::Error::Parse { offset, reason } => {
            ApiError::new(StatusCode::BAD_REQUEST, format!("invalid PLY: {reason}")).with("offset", json!(offset))
        }
        e => ApiError::new(StatusCode::BAD_REQUEST, format!("invalid PLY: {e}")),
    })?;
    let r = s.store.put_cloud(&cloud)?;
    Ok(Json(json!({ "cloud_id": r.cloud_id, "point_count": r.point_count })))
}

async fn list(State(s): State<Shared>) -> Json<Vec<CloudRecord>> {
    Json(s.store.list())
}

fn load(s: &AppState, id: &str) -> ApiResult<arcal_core::PointCloud> {
    s.store.load_cloud(id)?.ok_or_else(|| ApiError::not_found("cloud", id))
}

async fn cloud_points(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let cloud = load(&s, &id)?;
    Ok(Json(json!({ "cloud_id": id, "point_count": cloud.len(), "points": cloud.to_xyz() })))
}

#[derive(Deserialize)]
struct CloudRef {
    cloud_id: String,
}

async fn run_detection(s: &AppState, id: &str) -> ApiResult<Timed> {
    let cloud = load(s, id)?;
    let q = s
        .queue
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded"))?;
    if cloud.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "cloud is empty"));
    }
    q.detect(cloud).await.map_err(|e| match e {
        QueueError::Full(n) => ApiError::new(StatusCode::TOO_MANY_REQUESTS, format!("inference queue full ({n} pending)")),
        e => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    })
}

#[derive(Serialize)]
struct DetectResponse {
    #[serde(rename = "box")]
    bbox: Label,
    score: f64,
    inference_ms: f64,
}

async fn detect(State(s): State<Shared>, body: Bytes) -> ApiResult<Json<DetectResponse>> {
    let req: CloudRef = json_body(&body)?;
    let t = run_detection(&s, &req.cloud_id).await?;
    let resp = DetectResponse {
        bbox: Label::from_box(&req.cloud_id, &t.detection.bbox),
        score: t.detection.score,
        inference_ms: t.elapsed.as_secs_f64() * 1e3,
    };
    let event = json!({ "event": "detection", "cloud_id": req.cloud_id, "box": resp.bbox, "score": resp.score });
    let _ = s.events.send(event.to_string());
    Ok(Json(resp))
}

#[derive(Deserialize)]
struct AnnotateRequest {
    cloud_id: String,
    corners: [[f64; 3]; 3],
    #[serde(default)]
    height_threshold: Option<f64>,
}

async fn annotate(State(s): State<Shared>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: AnnotateRequest = json_body(&body)?;
    let cloud = load(&s, &req.cloud_id)?;
    let [a, b, c] = req.corners.map(Point3::from);
    let bx = box_from_corners(&cloud, &CornerTriple::new(a, b, c), req.height_threshold.unwrap_or(DEFAULT_HEIGHT_THRESHOLD))
        .map_err(core_error)?;
    Ok(Json(json!({ "box": Label::from_box(&req.cloud_id, &bx) })))
}

/// Field-level schema check, so that every failing field is reported and
/// not just the first one serde trips over.
pub fn parse_label(v: &Value, path_id: &str) -> Result<Label, Vec<FieldError>> {
    let mut errs = Vec::new();
    let mut fail = |f: &str, r: &str| {
        errs.push(FieldError {
            field: f.into(),
            reason: r.into(),
        })
    };
    let Some(obj) = v.as_object() else {
        fail("$", "label must be a JSON object");
        return Err(errs);
    };
    let string = |k: &str| obj.get(k).and_then(Value::as_str).map(str::to_string);
    let vec3 = |k: &str| -> Option<[f64; 3]> {
        let a = obj.get(k)?.as_array()?;
        if a.len() != 3 {
            return None;
        }
        Some([a[0].as_f64()?, a[1].as_f64()?, a[2].as_f64()?])
    };
    let cloud_id = string("cloud_id");
    let class = string("class");
    let center = vec3("center");
    let size = vec3("size");
    let yaw = obj.get("yaw").and_then(Value::as_f64);
    if cloud_id.is_none() {
        fail("cloud_id", "required string");
    }
    if class.is_none() {
        fail("class", "required string");
    }
    if center.is_none() {
        fail("center", "required array of 3 numbers");
    }
    if size.is_none() {
        fail("size", "required array of 3 numbers");
    }
    if yaw.is_none() {
        fail("yaw", "required number");
    }
    for k in obj.keys() {
        if !["cloud_id", "class", "center", "size", "yaw"].contains(&k.as_str()) {
            fail(k, "unknown field");
        }
    }
    if let Some(id) = &cloud_id {
        if id != path_id {
            fail("cloud_id", "must match the cloud id in the URL");
        }
    }
    if !errs.is_empty() {
        return Err(errs);
    }
    let label = Label {
        cloud_id: cloud_id.unwrap(),
        class: class.unwrap(),
        center: center.unwrap(),
        size: size.unwrap(),
        yaw: yaw.unwrap(),
    };
    label.to_box()?;
    Ok(label)
}

async fn put_label(State(s): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<StatusCode> {
    if s.store.record(&id).is_none() {
        return Err(ApiError::not_found("cloud", &id));
    }
    let v: Value = json_body(&body)?;
    let label = parse_label(&v, &id).map_err(|errs| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "label failed validation").with("fields", json!(errs))
    })?;
    if !s.store.put_label(&id, &label)? {
        return Err(ApiError::not_found("cloud", &id));
    }
    Ok(StatusCode::NO_CONTENT)
}

async fn get_label(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let text = s.store.label_json(&id)?.ok_or_else(|| ApiError::not_found("label", &id))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

async fn delete_label(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    if s.store.delete_label(&id)? {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::not_found("label", &id))
    }
}

#[derive(Deserialize)]
struct CalibrateRequest {
    robot_in_map: TransformJson,
    cloud_id: String,
}

async fn calibrate(State(s): State<Shared>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: CalibrateRequest = json_body(&body)?;
    let robot_in_map = RigidTransform::try_from(req.robot_in_map)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("robot_in_map: {e}")))?;
    let t = run_detection(&s, &req.cloud_id).await?;
    let d = t.detection;
    if d.score < s.score_threshold {
        return Err(ApiError::new(StatusCode::CONFLICT, "robot not found").with("score", json!(d.score)));
    }
    let robot_in_ar = RigidTransform::from_box(&d.bbox);
    let ar_to_map = calibrate_ar_to_map(&robot_in_map, &robot_in_ar);
    Ok(Json(json!({
        "ar_to_map": TransformJson::from(&ar_to_map),
        "robot_in_ar": TransformJson::from(&robot_in_ar),
        "box": Label::from_box(&req.cloud_id, &d.bbox),
        "score": d.score,
    })))
}

async fn events(State(s): State<Shared>, ws: WebSocketUpgrade) -> Response {
    let rx = s.events.subscribe();
    ws.on_upgrade(move |socket| forward_events(socket, rx))
}

async fn forward_events(mut socket: WebSocket, mut rx: broadcast::Receiver<String>) {
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(_) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                _ => {}
            },
        }
    }
}

async fn schema(Path(name): Path<String>) -> ApiResult<Json<Value>> {
    crate::schema::by_name(&name)
        .map(Json)
        .ok_or_else(|| ApiError::not_found("schema", &name))
}
