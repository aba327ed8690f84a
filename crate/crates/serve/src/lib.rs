//! HTTP API over one trained model and one stamp dataset.
//!
//! Everything except the saved selection is computed at startup and read
//! only afterwards. The selection is guarded by a lock and versioned by an
//! etag (SHA-256 of its canonical JSON).

pub mod render;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use base64::Engine as _;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use desom_core::desom::{stamps_tensor, DesomModel};
use desom_core::eval::{
    confusion_rates, members_by_cell, order_cells_by_percentile, ratio_map, roc_switch_off,
    fit_scorer, LabeledCells, PvSelection, ReferenceScorer, ScorerConfig,
};
use desom_core::som::Cell;
use desom_core::stamps::{Label, Stamp, STAMP_SIDE};

pub use render::{contact_sheet, grayscale_png};

pub const DEFAULT_MEMBER_LIMIT: usize = 16;
pub const MAX_MEMBER_LIMIT: usize = 256;
pub const DEFAULT_ROC_PERCENTILE: f64 = 50.0;

#[derive(Clone, Debug, Default)]
pub struct ServeOptions {
    /// Where POSTed selections are written. An existing file there is loaded at startup.
    pub selection_path: Option<PathBuf>,
    /// Seed of the reference scorer that orders cells for `/api/roc`.
    pub scorer_seed: u64,
    pub scorer: ScorerConfig,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

struct Inner {
    m: usize,
    d: usize,
    pv_png: Vec<Vec<u8>>,
    stamps: Vec<Stamp>,
    cells: Vec<Cell>,
    members: Vec<Vec<usize>>,
    labeled: LabeledCells,
    has_labels: bool,
    /// Reference scores per stamp; `None` unless both classes are present.
    scores: Option<Vec<f64>>,
    saved: RwLock<Saved>,
    selection_path: Option<PathBuf>,
}

struct Saved {
    selection: PvSelection,
    etag: String,
}

impl Saved {
    fn new(selection: PvSelection) -> Self {
        let etag = etag_of(&selection);
        Saved { selection, etag }
    }
}

/// Quoted hex SHA-256 of the selection's canonical JSON.
pub fn etag_of(sel: &PvSelection) -> String {
    let digest = Sha256::digest(sel.to_json().as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("\"{hex}\"")
}

impl AppState {
    pub fn new(model: &DesomModel, stamps: Vec<Stamp>, opts: ServeOptions) -> desom_core::Result<Self> {
        let (m, d) = (model.m(), model.d());
        let side = STAMP_SIDE as u32;
        let pvs = model.decode_prototypes()?;
        let pv_png = pvs.samples().map(|p| grayscale_png(p, side, side)).collect();

        let data = stamps_tensor(&stamps)?;
        let latents = model.encode(&data)?;
        let cells = model.assign_cells(&data)?;
        let labeled = LabeledCells::from_assignments(m, &stamps, &cells);
        let has_labels = !labeled.real.is_empty() || !labeled.bogus.is_empty();
        let scores = if !labeled.real.is_empty() && !labeled.bogus.is_empty() {
            let labels: Vec<Label> = stamps.iter().map(|s| s.label).collect();
            let scorer = fit_scorer(&latents, d, &labels, opts.scorer_seed, &opts.scorer)?;
            Some(latents.chunks_exact(d).map(|z| scorer.score(z)).collect())
        } else {
            None
        };

        let selection = match &opts.selection_path {
            Some(p) if p.exists() => {
                let sel = PvSelection::from_json(&std::fs::read_to_string(p)?)?;
                if sel.m() != m {
                    return Err(desom_core::Error::Shape {
                        context: format!("saved selection {}", p.display()),
                        expected: m.to_string(),
                        actual: sel.m().to_string(),
                    });
                }
                sel
            }
            _ => PvSelection::empty(m),
        };

        Ok(AppState(Arc::new(Inner {
            m,
            d,
            pv_png,
            members: members_by_cell(&cells, m),
            stamps,
            cells,
            labeled,
            has_labels,
            scores,
            saved: RwLock::new(Saved::new(selection)),
            selection_path: opts.selection_path,
        })))
    }

    /// The currently saved selection and its etag.
    pub fn selection(&self) -> (PvSelection, String) {
        let saved = self.0.saved.read().expect("selection lock");
        (saved.selection.clone(), saved.etag.clone())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/map", get(map_info))
        .route("/api/pv/{i}/{j}", get(pv_image))
        .route("/api/pv/{i}/{j}/members", get(pv_members))
        .route("/api/metrics", get(metrics))
        .route("/api/selection", get(get_selection).post(post_selection))
        .route("/api/roc", get(roc))
        .route("/api/ratio", get(ratio))
        .with_state(state)
}

/// Serves the API on `addr` until the process is stopped.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, msg)
}

fn unprocessable(msg: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, msg)
}

fn conflict(msg: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::CONFLICT, msg)
}

fn internal(err: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, err.to_string())
}

impl Inner {
    fn cell(&self, i: &str, j: &str) -> ApiResult<Cell> {
        let not_found = || ApiError::new(StatusCode::NOT_FOUND, format!("no cell ({i}, {j}) on a {0}x{0} map", self.m));
        let row: usize = i.parse().map_err(|_| not_found())?;
        let col: usize = j.parse().map_err(|_| not_found())?;
        if row >= self.m || col >= self.m {
            return Err(not_found());
        }
        Ok(Cell::new(row, col))
    }

    /// Parses selection JSON: 400 if it is not JSON at all, 422 if it is not
    /// a valid selection for this map.
    fn parse_selection(&self, text: &str) -> ApiResult<PvSelection> {
        serde_json::from_str::<serde_json::Value>(text).map_err(|e| bad_request(format!("selection is not JSON: {e}")))?;
        let sel = PvSelection::from_json(text).map_err(|e| unprocessable(e.to_string()))?;
        if sel.m() != self.m {
            return Err(unprocessable(format!("selection is for a {0}x{0} map, this map is {1}x{1}", sel.m(), self.m)));
        }
        Ok(sel)
    }

    fn need_both_classes(&self) -> ApiResult<()> {
        if self.labeled.real.is_empty() || self.labeled.bogus.is_empty() {
            return Err(conflict(format!(
                "dataset has {} real and {} bogus stamps; both classes are needed",
                self.labeled.real.len(),
                self.labeled.bogus.len()
            )));
        }
        Ok(())
    }

    fn persist(&self, sel: &PvSelection) -> std::io::Result<()> {
        let Some(path) = &self.selection_path else {
            return Ok(());
        };
        write_atomic(path, sel.to_json().as_bytes())
    }
}

/// Writes to a sibling temporary file and renames it over `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

async fn map_info(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "m": s.0.m, "d": s.0.d }))
}

async fn pv_image(State(s): State<AppState>, UrlPath((i, j)): UrlPath<(String, String)>) -> ApiResult<Response> {
    let Some(j) = j.strip_suffix(".png") else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("expected /api/pv/{i}/{{j}}.png, got {j:?}")));
    };
    let cell = s.0.cell(&i, j)?;
    let png = s.0.pv_png[cell.index(s.0.m)].clone();
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Serialize)]
struct Member {
    index: usize,
    label: Label,
    png: String,
}

#[derive(Serialize)]
struct LabelHistogram {
    real: usize,
    bogus: usize,
    unlabeled: usize,
}

#[derive(Serialize)]
struct MembersResponse {
    cell: [usize; 2],
    count: usize,
    members: Vec<Member>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<LabelHistogram>,
}

async fn pv_members(
    State(s): State<AppState>,
    UrlPath((i, j)): UrlPath<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<MembersResponse>> {
    let inner = &s.0;
    let cell = inner.cell(&i, &j)?;
    let limit = match q.get("limit") {
        None => DEFAULT_MEMBER_LIMIT,
        Some(v) => match v.parse::<usize>() {
            Ok(k) if (1..=MAX_MEMBER_LIMIT).contains(&k) => k,
            _ => return Err(bad_request(format!("limit must be an integer in 1..={MAX_MEMBER_LIMIT}, got {v:?}"))),
        },
    };
    let all = &inner.members[cell.index(inner.m)];
    // Evenly spaced over the members so repeated requests return the same sample.
    let take = limit.min(all.len());
    let side = STAMP_SIDE as u32;
    let members = (0..take)
        .map(|k| {
            let idx = all[k * all.len() / take];
            let stamp = &inner.stamps[idx];
            Member {
                index: idx,
                label: stamp.label,
                png: base64::engine::general_purpose::STANDARD.encode(grayscale_png(stamp.pixels(), side, side)),
            }
        })
        .collect();
    let labels = inner.has_labels.then(|| {
        let mut h = LabelHistogram {
            real: 0,
            bogus: 0,
            unlabeled: 0,
        };
        for &idx in all {
            match inner.stamps[idx].label {
                Label::Real => h.real += 1,
                Label::Bogus => h.bogus += 1,
                Label::Unlabeled => h.unlabeled += 1,
            }
        }
        h
    });
    Ok(Json(MembersResponse {
        cell: [cell.row, cell.col],
        count: all.len(),
        members,
        labels,
    }))
}

async fn metrics(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let text = q.get("sel").ok_or_else(|| bad_request("missing sel query parameter"))?;
    let sel = s.0.parse_selection(text)?;
    s.0.need_both_classes()?;
    let rates = confusion_rates(&sel, &s.0.labeled).map_err(internal)?;
    Ok(Json(rates).into_response())
}

fn with_etag(mut resp: Response, etag: &str) -> Response {
    if let Ok(v) = HeaderValue::from_str(etag) {
        resp.headers_mut().insert(header::ETAG, v);
    }
    resp
}

async fn get_selection(State(s): State<AppState>) -> Response {
    let (sel, etag) = s.selection();
    let resp = ([(header::CONTENT_TYPE, "application/json")], sel.to_json()).into_response();
    with_etag(resp, &etag)
}

/// Last write wins unless the client sends `If-Match` with a stale etag.
async fn post_selection(State(s): State<AppState>, headers: HeaderMap, body: String) -> ApiResult<Response> {
    let sel = s.0.parse_selection(&body)?;
    let mut saved = s.0.saved.write().expect("selection lock");
    if let Some(expected) = headers.get(header::IF_MATCH) {
        let expected = expected.to_str().map_err(|_| bad_request("If-Match is not ASCII"))?;
        let matches = expected.split(',').map(str::trim).any(|t| t == "*" || t == saved.etag);
        if !matches {
            return Err(ApiError::new(
                StatusCode::PRECONDITION_FAILED,
                format!("selection changed: current etag is {}", saved.etag),
            ));
        }
    }
    s.0.persist(&sel).map_err(internal)?;
    *saved = Saved::new(sel);
    let etag = saved.etag.clone();
    drop(saved);
    Ok(with_etag(Json(json!({ "etag": etag })).into_response(), &etag))
}

async fn roc(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let pct = match q.get("q") {
        None => DEFAULT_ROC_PERCENTILE,
        Some(v) => match v.parse::<f64>() {
            Ok(p) if (0.0..=100.0).contains(&p) => p,
            _ => return Err(bad_request(format!("q must be a percentile in [0, 100], got {v:?}"))),
        },
    };
    s.0.need_both_classes()?;
    let scores = s.0.scores.as_ref().ok_or_else(|| conflict("no reference scores"))?;
    let order = order_cells_by_percentile(&s.0.cells, scores, s.0.m, pct).map_err(internal)?;
    let curve = roc_switch_off(&order, &s.0.labeled, Some(pct)).map_err(internal)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], curve.to_csv()).into_response())
}

async fn ratio(State(s): State<AppState>) -> ApiResult<Json<Vec<Vec<Option<f64>>>>> {
    s.0.need_both_classes()?;
    let map = ratio_map(&s.0.labeled).map_err(internal)?;
    Ok(Json(map.grid()))
}
