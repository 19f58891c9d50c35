//! HTTP façade over frozen checkpoints.
//!
//! Every request is first turned into an [`ApiRequest`] and answered by the
//! synchronous [`handle`]; the axum layer only does the translation, CORS and
//! off-loading to blocking threads.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower_http::cors::{Any, CorsLayer};

use crate::editor::EditorParams;
use crate::error::Error;
use crate::geometry::Mesh;
use crate::regressor::Regressor;
use crate::sdfnet::{reconstruct, Decoder};

pub const SCHEMA_VERSION: u32 = 1;
pub const MIN_RESOLUTION: usize = 8;
/// Header carrying the checkpoint hash on every HTTP response.
pub const CONFIG_HASH_HEADER: &str = "x-config-hash";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceLimits {
    /// Largest accepted marching-cubes resolution.
    pub max_resolution: usize,
    pub default_resolution: usize,
    /// Mesh extractions allowed to run at once; further requests get a
    /// retriable busy response.
    pub mesh_workers: usize,
}

impl Default for ServiceLimits {
    fn default() -> Self {
        Self {
            max_resolution: 96,
            default_resolution: 64,
            mesh_workers: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CatalogEntry {
    pub id: String,
    pub name: String,
    pub latent: Vec<f64>,
}

/// Loaded models plus the in-memory map of edited latents.
pub struct SessionState {
    pub decoder: Decoder,
    pub regressor: Regressor,
    pub editor: EditorParams,
    pub catalog: Vec<CatalogEntry>,
    pub limits: ServiceLimits,
    pub config_hash: String,
    latents: RwLock<HashMap<String, Vec<f64>>>,
    in_flight: AtomicUsize,
}

impl SessionState {
    /// `config_hash` should identify the loaded checkpoints (for example a
    /// digest of their sidecars).
    pub fn new(decoder: Decoder, regressor: Regressor, editor: EditorParams, catalog: Vec<CatalogEntry>, limits: ServiceLimits, config_hash: String) -> Self {
        let latents = catalog.iter().map(|c| (latent_id(&c.latent), c.latent.clone())).collect();
        Self {
            decoder,
            regressor,
            editor,
            catalog,
            limits,
            config_hash,
            latents: RwLock::new(latents),
            in_flight: AtomicUsize::new(0),
        }
    }

    fn attributes(&self, z: &[f64]) -> Result<BTreeMap<String, f64>, ApiError> {
        let p = self.regressor.predict(z)?;
        Ok(self.regressor.attribute_names.iter().cloned().zip(p).collect())
    }

    fn lookup_latent(&self, id: &str) -> Option<Vec<f64>> {
        self.latents.read().expect("latent map poisoned").get(id).cloned()
    }
}

/// Content hash of a latent: hex SHA-256 of its little-endian bytes, 32 chars.
pub fn latent_id(z: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in z {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Json,
    Bin,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshQuery {
    pub res: Option<usize>,
    pub format: Option<MeshFormat>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditBody {
    pub shape_id: Option<String>,
    pub latent_id: Option<String>,
    /// Attribute name to edit strength; missing attributes are zero.
    pub eps: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ApiRequest {
    Health,
    ListShapes,
    ShapeMesh { id: String, query: MeshQuery },
    LatentMesh { id: String, query: MeshQuery },
    Edit(EditBody),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ApiBody {
    Json(Value),
    Binary(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: ApiBody,
}

impl ApiResponse {
    pub fn json(&self) -> Option<&Value> {
        match &self.body {
            ApiBody::Json(v) => Some(v),
            ApiBody::Binary(_) => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Validation(String),
    #[error("degenerate edit direction for attribute `{0}`")]
    Degenerate(String),
    #[error("mesh workers busy, retry shortly")]
    Busy,
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::NotFound(_) => 404,
            ApiError::Validation(_) => 400,
            ApiError::Degenerate(_) => 422,
            ApiError::Busy => 503,
            ApiError::Internal(_) => 500,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ApiError::NotFound(_) => "not_found",
            ApiError::Validation(_) => "validation",
            ApiError::Degenerate(_) => "degenerate_direction",
            ApiError::Busy => "busy",
            ApiError::Internal(_) => "internal",
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::DegenerateDirection(a) => ApiError::Degenerate(a),
            Error::OutOfRange { .. } | Error::InvalidArgument(_) | Error::ShapeMismatch { .. } => ApiError::Validation(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

/// Answer one request. Deterministic given the state's models and the
/// latents registered so far.
fn error_response(state: &SessionState, e: &ApiError) -> ApiResponse {
    let mut v = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
    stamp(state, &mut v);
    ApiResponse {
        status: e.status(),
        body: ApiBody::Json(v),
    }
}

pub fn handle(state: &SessionState, req: ApiRequest) -> ApiResponse {
    let result = match req {
        ApiRequest::Health => Ok(ApiBody::Json(json!({ "status": "ok" }))),
        ApiRequest::ListShapes => list_shapes(state),
        ApiRequest::ShapeMesh { id, query } => match state.catalog.iter().find(|c| c.id == id) {
            Some(c) => mesh_response(state, &c.latent, &query),
            None => Err(ApiError::NotFound(format!("unknown shape `{id}`"))),
        },
        ApiRequest::LatentMesh { id, query } => match state.lookup_latent(&id) {
            Some(z) => mesh_response(state, &z, &query),
            None => Err(ApiError::NotFound(format!("unknown latent `{id}`"))),
        },
        ApiRequest::Edit(body) => edit(state, &body),
    };
    match result {
        Ok(ApiBody::Json(mut v)) => {
            stamp(state, &mut v);
            ApiResponse {
                status: 200,
                body: ApiBody::Json(v),
            }
        }
        Ok(bin) => ApiResponse { status: 200, body: bin },
        Err(e) => error_response(state, &e),
    }
}

fn stamp(state: &SessionState, v: &mut Value) {
    if let Value::Object(m) = v {
        m.insert("schema".into(), json!(SCHEMA_VERSION));
        m.insert("config_hash".into(), json!(state.config_hash));
    }
}

fn list_shapes(state: &SessionState) -> Result<ApiBody, ApiError> {
    let shapes = state
        .catalog
        .iter()
        .map(|c| {
            Ok(json!({
                "id": c.id,
                "name": c.name,
                "latent_id": latent_id(&c.latent),
                "attributes": state.attributes(&c.latent)?,
            }))
        })
        .collect::<Result<Vec<_>, ApiError>>()?;
    Ok(ApiBody::Json(json!({ "shapes": shapes })))
}

struct WorkerSlot<'a>(&'a AtomicUsize);

impl Drop for WorkerSlot<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

fn mesh_response(state: &SessionState, z: &[f64], q: &MeshQuery) -> Result<ApiBody, ApiError> {
    let res = q.res.unwrap_or(state.limits.default_resolution);
    if !(MIN_RESOLUTION..=state.limits.max_resolution).contains(&res) {
        return Err(ApiError::Validation(format!("resolution {res} outside [{MIN_RESOLUTION}, {}]", state.limits.max_resolution)));
    }
    if state.in_flight.fetch_add(1, Ordering::SeqCst) >= state.limits.mesh_workers {
        state.in_flight.fetch_sub(1, Ordering::SeqCst);
        return Err(ApiError::Busy);
    }
    let _slot = WorkerSlot(&state.in_flight);
    let mesh = reconstruct(&state.decoder, z, res)?;
    Ok(match q.format.unwrap_or(MeshFormat::Json) {
        MeshFormat::Json => ApiBody::Json(mesh_json(&mesh, res, z)),
        MeshFormat::Bin => ApiBody::Binary(mesh_binary(&mesh)),
    })
}

/// `{"vertices": [x0, y0, z0, x1, ...], "triangles": [a0, b0, c0, ...]}`.
pub fn mesh_json(mesh: &Mesh, res: usize, z: &[f64]) -> Value {
    let v: Vec<f64> = mesh.vertices.iter().flatten().copied().collect();
    let t: Vec<u32> = mesh.triangles.iter().flatten().copied().collect();
    json!({
        "latent_id": latent_id(z),
        "resolution": res,
        "vertex_count": mesh.vertices.len(),
        "triangle_count": mesh.triangles.len(),
        "vertices": v,
        "triangles": t,
    })
}

/// Little-endian `u32 nv, u32 nt, nv*3 f32, nt*3 u32`.
pub fn mesh_binary(mesh: &Mesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + mesh.vertices.len() * 12 + mesh.triangles.len() * 12);
    out.extend((mesh.vertices.len() as u32).to_le_bytes());
    out.extend((mesh.triangles.len() as u32).to_le_bytes());
    for v in mesh.vertices.iter().flatten() {
        out.extend((*v as f32).to_le_bytes());
    }
    for i in mesh.triangles.iter().flatten() {
        out.extend(i.to_le_bytes());
    }
    out
}

fn edit(state: &SessionState, body: &EditBody) -> Result<ApiBody, ApiError> {
    let z = match (&body.shape_id, &body.latent_id) {
        (Some(s), None) => state.catalog.iter().find(|c| &c.id == s).map(|c| c.latent.clone()).ok_or_else(|| ApiError::NotFound(format!("unknown shape `{s}`")))?,
        (None, Some(l)) => state.lookup_latent(l).ok_or_else(|| ApiError::NotFound(format!("unknown latent `{l}`")))?,
        _ => return Err(ApiError::Validation("give exactly one of shape_id or latent_id".into())),
    };
    for (name, e) in &body.eps {
        if !(-1.0..=1.0).contains(e) {
            return Err(ApiError::Validation(format!("eps for `{name}` is {e}, outside [-1, 1]")));
        }
    }
    let pairs: Vec<(String, f64)> = body.eps.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let eps = state.editor.eps_vector(&pairs)?;
    let z2 = state.editor.edit(&z, &eps)?;
    let id = latent_id(&z2);
    state.latents.write().expect("latent map poisoned").entry(id.clone()).or_insert_with(|| z2.clone());
    let disp = z.iter().zip(&z2).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
    Ok(ApiBody::Json(json!({
        "source_latent_id": latent_id(&z),
        "latent_id": id,
        "latent": z2,
        "before": state.attributes(&z)?,
        "after": state.attributes(&z2)?,
        "displacement_norm": disp,
    })))
}

type Shared = Arc<SessionState>;

async fn run(state: Shared, req: ApiRequest) -> Response {
    let s = state.clone();
    let out = match tokio::task::spawn_blocking(move || handle(&s, req)).await {
        Ok(r) => to_http(r),
        Err(e) => to_http(error_response(&state, &ApiError::Internal(e.to_string()))),
    };
    with_hash(&state, out)
}

fn with_hash(state: &SessionState, mut out: Response) -> Response {
    if let Ok(v) = HeaderValue::from_str(&state.config_hash) {
        out.headers_mut().insert(CONFIG_HASH_HEADER, v);
    }
    out
}

fn to_http(r: ApiResponse) -> Response {
    let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let mut resp = match r.body {
        ApiBody::Json(v) => (status, axum::Json(v)).into_response(),
        ApiBody::Binary(b) => (status, [(header::CONTENT_TYPE, "application/octet-stream")], b).into_response(),
    };
    if status == StatusCode::SERVICE_UNAVAILABLE {
        resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from_static("1"));
    }
    resp
}

fn bad_request(state: &SessionState, msg: String) -> Response {
    with_hash(state, to_http(error_response(state, &ApiError::Validation(msg))))
}

/// Router with all endpoints and permissive CORS.
pub fn router(state: Shared) -> Router {
    let cors = CorsLayer::new().allow_origin(Any).allow_methods([Method::GET, Method::POST]).allow_headers(Any);
    Router::new()
        .route("/health", get(|State(s): State<Shared>| run(s, ApiRequest::Health)))
        .route("/shapes", get(|State(s): State<Shared>| run(s, ApiRequest::ListShapes)))
        .route(
            "/shapes/{id}/mesh",
            get(|State(s): State<Shared>, UrlPath(id): UrlPath<String>, q: Result<Query<MeshQuery>, _>| async move {
                match q {
                    Ok(Query(query)) => run(s, ApiRequest::ShapeMesh { id, query }).await,
                    Err(e) => bad_request(&s, format!("{e}")),
                }
            }),
        )
        .route(
            "/latents/{id}/mesh",
            get(|State(s): State<Shared>, UrlPath(id): UrlPath<String>, q: Result<Query<MeshQuery>, _>| async move {
                match q {
                    Ok(Query(query)) => run(s, ApiRequest::LatentMesh { id, query }).await,
                    Err(e) => bad_request(&s, format!("{e}")),
                }
            }),
        )
        .route(
            "/edit",
            post(|State(s): State<Shared>, body: Bytes| async move {
                match serde_json::from_slice::<EditBody>(&body) {
                    Ok(b) => run(s, ApiRequest::Edit(b)).await,
                    Err(e) => bad_request(&s, format!("bad edit body: {e}")),
                }
            }),
        )
        .layer(cors)
        .with_state(state)
}

/// Serve until the process is stopped.
pub async fn serve(state: SessionState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await
}
