//! HTTP session layer for interactive scribble segmentation.
//!
//! A session owns one uploaded image together with its neighbourhood
//! statistics and clustering, computed once at upload. Scribble updates and
//! segment calls reuse them. Requests on one session are serialised by a
//! per-session lock; different sessions run concurrently.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::de::DeserializeOwned;
use stochseg::api::{
    rasterize_strokes, CreatedSession, ErrorBody, ScribbleUpdate, SegmentRequest, SegmentResponse, SessionCount,
};
use stochseg::field::ScribbleMask;
use stochseg::io::{decode_image, encode_mask_png, encode_scribbles_png, image_dimensions};
use stochseg::pipeline::{prepare, segment, Prepared};
use stochseg::{Error, ImageGrid, RunConfig};
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Largest accepted upload, in pixels.
    pub max_pixels: usize,
    /// Idle time after which a session is dropped.
    pub ttl: Duration,
    pub static_dir: PathBuf,
    /// Base configuration for new sessions; uploads may override it.
    pub defaults: RunConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_pixels: 2_000_000,
            ttl: Duration::from_secs(30 * 60),
            static_dir: PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/static")),
            defaults: RunConfig::default(),
        }
    }
}

struct Session {
    image: Arc<ImageGrid>,
    prep: Arc<Prepared>,
    config: RunConfig,
    scribbles: ScribbleMask,
    mask_png: Option<Vec<u8>>,
    updated: Instant,
}

type SharedSession = Arc<tokio::sync::Mutex<Session>>;

pub struct AppState {
    cfg: ServiceConfig,
    sessions: Mutex<HashMap<String, SharedSession>>,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            cfg,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    fn get(&self, id: &str) -> Result<SharedSession, ApiError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    /// Drops sessions idle for longer than the TTL as of `now`. Sessions
    /// busy with a request are left alone. Returns how many were dropped.
    pub fn evict_expired(&self, now: Instant) -> usize {
        let mut map = self.sessions.lock().unwrap();
        let before = map.len();
        map.retain(|_, s| match s.try_lock() {
            Ok(s) => now.saturating_duration_since(s.updated) <= self.cfg.ttl,
            Err(_) => true,
        });
        before - map.len()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session {id}"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::MissingSeeds(_) => StatusCode::CONFLICT,
            Error::Config(_)
            | Error::Domain(_)
            | Error::InvalidImage(_)
            | Error::InvalidWindow { .. }
            | Error::DimensionMismatch(_)
            | Error::Codec(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Empty bodies mean "no overrides".
fn parse_json<T: DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    let static_files = ServeDir::new(&state.cfg.static_dir);
    // multipart overhead on top of a raw 8-bit RGB image at the pixel cap
    let body_limit = state.cfg.max_pixels.saturating_mul(4).max(1 << 20) + (1 << 16);
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/sessions", post(create_session).get(count_sessions))
        .route("/sessions/{id}", delete(delete_session))
        .route("/sessions/{id}/scribbles", get(get_scribbles).put(put_scribbles))
        .route("/sessions/{id}/segment", post(run_segment))
        .route("/sessions/{id}/mask", get(get_mask))
        .fallback_service(static_files)
        .layer(DefaultBodyLimit::max(body_limit))
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

/// Serves until the listener fails, evicting idle sessions in the background.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    let period = (state.cfg.ttl / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
    let weak = Arc::downgrade(&state);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let Some(state) = weak.upgrade() else { break };
            let n = state.evict_expired(Instant::now());
            if n > 0 {
                tracing::info!(evicted = n, "dropped idle sessions");
            }
        }
    });
    axum::serve(listener, router(state)).await
}

async fn count_sessions(State(st): State<Arc<AppState>>) -> Json<SessionCount> {
    Json(SessionCount {
        sessions: st.session_count(),
    })
}

async fn create_session(
    State(st): State<Arc<AppState>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> ApiResult<(StatusCode, Json<CreatedSession>)> {
    let mut multipart = multipart.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let mut image_bytes = None;
    let mut config = st.cfg.defaults.clone();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        match name.as_str() {
            "image" => image_bytes = Some(data),
            "config" => {
                config =
                    serde_json::from_slice(&data).map_err(|e| ApiError::bad_request(format!("bad config: {e}")))?;
            }
            other => return Err(ApiError::bad_request(format!("unexpected field '{other}'"))),
        }
    }
    let bytes = image_bytes.ok_or_else(|| ApiError::bad_request("missing 'image' field"))?;
    config.validate()?;

    let (w, h) = image_dimensions(&bytes).map_err(|e| ApiError::bad_request(e.to_string()))?;
    if w.saturating_mul(h) > st.cfg.max_pixels {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("{w}x{h} image exceeds {} pixels", st.cfg.max_pixels),
        ));
    }

    let cfg = config.clone();
    let (image, prep) = tokio::task::spawn_blocking(move || -> Result<_, Error> {
        let image = decode_image(&bytes)?;
        let prep = prepare(&image, &cfg)?;
        Ok((image, prep))
    })
    .await??;

    let id = uuid::Uuid::new_v4().simple().to_string();
    let created = CreatedSession {
        id: id.clone(),
        width: image.width(),
        height: image.height(),
        clusters: prep.clusters.q,
        cluster_objective: prep.clusters.objective(),
        config: config.clone(),
    };
    let session = Session {
        scribbles: ScribbleMask::new(image.width(), image.height()),
        image: Arc::new(image),
        prep: Arc::new(prep),
        config,
        mask_png: None,
        updated: Instant::now(),
    };
    st.sessions
        .lock()
        .unwrap()
        .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
    tracing::info!(%id, width = created.width, height = created.height, "session created");
    Ok((StatusCode::CREATED, Json(created)))
}

async fn delete_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let removed = st.sessions.lock().unwrap().remove(&id);
    match removed {
        Some(_) => {
            tracing::info!(%id, "session deleted");
            Ok(StatusCode::NO_CONTENT)
        }
        None => Err(ApiError::not_found(&id)),
    }
}

async fn put_scribbles(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<StatusCode> {
    let session = st.get(&id)?;
    let update: ScribbleUpdate = parse_json(&body)?;
    let mut s = session.lock().await;
    let mut next = if update.clear {
        ScribbleMask::new(s.image.width(), s.image.height())
    } else {
        s.scribbles.clone()
    };
    rasterize_strokes(&mut next, &update.strokes)?;
    s.scribbles = next;
    s.updated = Instant::now();
    Ok(StatusCode::NO_CONTENT)
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn get_scribbles(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = st.get(&id)?;
    let s = session.lock().await;
    Ok(png(encode_scribbles_png(&s.scribbles)?))
}

async fn run_segment(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SegmentResponse>> {
    let session = st.get(&id)?;
    let req: SegmentRequest = parse_json(&body)?;
    let mut s = session.lock().await;
    // cliques stay pinned to the session seed unless a fresh draw is asked for
    if req.resample && req.seed.is_none() {
        s.config.seed = s.config.seed.wrapping_add(1);
    }
    let cfg = req.apply(&s.config);
    cfg.validate()?;
    s.scribbles.require_both_classes()?;

    let (image, prep, scribbles, run_cfg) = (s.image.clone(), s.prep.clone(), s.scribbles.clone(), cfg.clone());
    let (out, mask_png) = tokio::task::spawn_blocking(move || -> Result<_, Error> {
        let out = segment(&image, &prep, &scribbles, &run_cfg)?;
        let bytes = encode_mask_png(&out.mask)?;
        Ok((out, bytes))
    })
    .await??;

    let report = out.report;
    let resp = SegmentResponse {
        mask_png_base64: base64::engine::general_purpose::STANDARD.encode(&mask_png),
        energy: report.energy,
        degree_mean: report.degree_mean,
        edges: report.edges,
        timings: report.timings.clone(),
        report,
        config: cfg,
    };
    s.mask_png = Some(mask_png);
    s.updated = Instant::now();
    Ok(Json(resp))
}

async fn get_mask(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = st.get(&id)?;
    let s = session.lock().await;
    match &s.mask_png {
        Some(bytes) => Ok(png(bytes.clone())),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "no mask yet; run segment first")),
    }
}
