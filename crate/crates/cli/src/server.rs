//! HTTP service behind the operator console.
//!
//! Sessions hold an immutable stack plus the artifacts derived from it. Reads
//! clone an `Arc` snapshot and never wait on a running job; mutations take the
//! session lock, and long work (detect, align, reconstruct) runs as one
//! background job per session whose result is committed only on success.
//!
//! Endpoints that do not name a session in the path pick it from the
//! `session` query parameter or the `x-session` header, and fall back to the
//! only session when exactly one exists.

use std::collections::hash_map::RandomState;
use std::collections::HashMap;
use std::hash::{BuildHasher, Hasher};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Body;
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post, put};
use axum::{Json, Router};
use nanoct::aligner::{apply_shift, build_plan, crop_stack, nudge, AlignMode, AlignmentPlan, ShiftFill};
use nanoct::fbp_recon::{reconstruct_rows_with_progress, Filter, Interpolation, ReconParams};
use nanoct::ref_locator::{track_reference_with_progress, LocatorOptions, Method, RefTrack};
use nanoct::stack_io::load_stack;
use nanoct::trail_roi::trail_product;
use nanoct::{Error, Image, ProjectionStack, Roi, Volume};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::parse::parse_pair;
use crate::render::{gray_png, Canvas, Normalize, CIRCLE_COLOR, ROI_COLOR, TARGET_COLOR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionStage {
    Loaded,
    RoiSet,
    Tracked,
    Aligned,
    Reconstructed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JobKind {
    Detect,
    Align,
    Reconstruct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JobState {
    Running,
    Done,
    Failed,
    Cancelled,
}

/// Everything derived so far; replaced wholesale on every mutation.
#[derive(Clone)]
struct Snapshot {
    manifest_path: PathBuf,
    stack: Arc<ProjectionStack>,
    roi: Option<Roi>,
    track: Option<Arc<RefTrack>>,
    plan: Option<Arc<AlignmentPlan>>,
    fill: ShiftFill,
    /// Full-size frames with the plan's shifts applied.
    shifted: Option<Arc<ProjectionStack>>,
    volume: Option<Arc<Volume>>,
    stage: SessionStage,
    revision: u64,
}

impl Snapshot {
    fn set_roi(&mut self, roi: Roi) {
        self.roi = Some(roi);
        self.track = None;
        self.clear_plan();
        self.stage = SessionStage::RoiSet;
    }

    fn clear_plan(&mut self) {
        self.plan = None;
        self.shifted = None;
        self.volume = None;
    }
}

struct Session {
    id: String,
    state: Mutex<Arc<Snapshot>>,
    /// Held while checking for or swapping the running job; taken before
    /// `state` whenever both are needed.
    job: Mutex<Option<Arc<Job>>>,
}

impl Session {
    fn snapshot(&self) -> Arc<Snapshot> {
        self.state.lock().unwrap().clone()
    }
}

pub struct Job {
    id: String,
    session: String,
    kind: JobKind,
    progress: AtomicU64,
    state: Mutex<(JobState, Option<String>)>,
    cancel: AtomicBool,
}

impl Job {
    fn report(&self, fraction: f64) -> bool {
        // non-negative floats order the same as their bit patterns
        let bits = fraction.clamp(0.0, 1.0).to_bits();
        self.progress.fetch_max(bits, Ordering::SeqCst);
        !self.cancel.load(Ordering::SeqCst)
    }

    fn progress(&self) -> f64 {
        f64::from_bits(self.progress.load(Ordering::SeqCst))
    }

    fn view(&self) -> JobView {
        let (state, error) = self.state.lock().unwrap().clone();
        JobView {
            id: self.id.clone(),
            session: self.session.clone(),
            kind: self.kind,
            progress: self.progress(),
            state,
            error,
        }
    }

    fn running(&self) -> bool {
        self.state.lock().unwrap().0 == JobState::Running
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    pub session: String,
    pub kind: JobKind,
    pub progress: f64,
    pub state: JobState,
    pub error: Option<String>,
}

#[derive(Default)]
struct Registry {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    jobs: RwLock<HashMap<String, Arc<Job>>>,
    counter: AtomicU64,
}

/// Shared service state; cheap to clone.
#[derive(Clone, Default)]
pub struct AppState {
    inner: Arc<Registry>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    fn token(&self, prefix: &str) -> String {
        let n = self.inner.counter.fetch_add(1, Ordering::SeqCst);
        let mut h = RandomState::new().build_hasher();
        h.write_u64(n);
        format!("{prefix}{n}-{:08x}", h.finish() as u32)
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.inner
            .sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id:?}")))
    }
}

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

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::NoReference(_) | Error::EmptyCrop => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Cancelled => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// The session an un-prefixed endpoint acts on.
struct Sess(Arc<Session>);

impl FromRequestParts<AppState> for Sess {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> ApiResult<Self> {
        let from_query = Query::<HashMap<String, String>>::try_from_uri(&parts.uri)
            .ok()
            .and_then(|q| q.0.get("session").cloned());
        let from_header = parts
            .headers
            .get("x-session")
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned);
        match from_query.or(from_header) {
            Some(id) => state.session(&id).map(Sess),
            None => {
                let sessions = state.inner.sessions.read().unwrap();
                match sessions.len() {
                    1 => Ok(Sess(sessions.values().next().unwrap().clone())),
                    0 => Err(ApiError::not_found("no session; POST /session first")),
                    _ => Err(ApiError::bad_request(
                        "several sessions exist; pass ?session= or x-session",
                    )),
                }
            }
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_session))
        .route("/projection/{file}", get(projection_png))
        .route("/trail.png", get(trail_png))
        .route("/roi", put(put_roi))
        .route("/detect", post(post_detect))
        .route("/track", get(get_track))
        .route("/shift/{k}", patch(patch_shift))
        .route("/align", post(post_align))
        .route("/reconstruct", post(post_reconstruct))
        .route("/job/{id}", get(get_job).delete(cancel_job))
        .route("/slice/{axis}/{file}", get(slice_png))
        .route("/volume.f32", get(volume_raw))
        .with_state(state)
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Serialize)]
struct SessionView {
    id: String,
    stage: SessionStage,
    revision: u64,
    manifest_path: PathBuf,
    frames: usize,
    width: usize,
    height: usize,
    bit_depth: u8,
    angle_start: f64,
    angle_stop: f64,
    roi: Option<Roi>,
    track: Option<TrackSummary>,
    plan: Option<AlignmentPlan>,
    fill: ShiftFill,
    volume: Option<[usize; 3]>,
    job: Option<JobView>,
}

#[derive(Serialize)]
struct TrackSummary {
    frames: usize,
    hits: usize,
    missed: Vec<usize>,
}

fn session_view(session: &Session) -> SessionView {
    let job = session.job.lock().unwrap().as_ref().map(|j| j.view());
    let s = session.snapshot();
    SessionView {
        id: session.id.clone(),
        stage: s.stage,
        revision: s.revision,
        manifest_path: s.manifest_path.clone(),
        frames: s.stack.len(),
        width: s.stack.width(),
        height: s.stack.height(),
        bit_depth: s.stack.bit_depth(),
        angle_start: s.stack.angle_start(),
        angle_stop: s.stack.angle_stop(),
        roi: s.roi,
        track: s.track.as_ref().map(|t| TrackSummary {
            frames: t.len(),
            hits: t.hits(),
            missed: (0..t.len()).filter(|&k| !t.entries[k].hit).collect(),
        }),
        plan: s.plan.as_deref().cloned(),
        fill: s.fill,
        volume: s.volume.as_ref().map(|v| {
            let (x, y, z) = v.dims();
            [x, y, z]
        }),
        job,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewSession {
    manifest_path: PathBuf,
}

async fn create_session(
    State(state): State<AppState>,
    Json(req): Json<NewSession>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let path = req.manifest_path.clone();
    let stack = tokio::task::spawn_blocking(move || load_stack(&path))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let id = state.token("s");
    let session = Arc::new(Session {
        id: id.clone(),
        state: Mutex::new(Arc::new(Snapshot {
            manifest_path: req.manifest_path,
            stack: Arc::new(stack),
            roi: None,
            track: None,
            plan: None,
            fill: ShiftFill::BorderMode,
            shifted: None,
            volume: None,
            stage: SessionStage::Loaded,
            revision: 0,
        })),
        job: Mutex::new(None),
    });
    state.inner.sessions.write().unwrap().insert(id, session.clone());
    Ok((StatusCode::CREATED, Json(session_view(&session))))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    Ok(Json(session_view(&*state.session(&id)?)))
}

/// Applies `f` to a copy of the snapshot under the session lock, refusing
/// while a job runs.
fn mutate(session: &Session, f: impl FnOnce(&mut Snapshot) -> ApiResult<()>) -> ApiResult<()> {
    let job = session.job.lock().unwrap();
    if let Some(j) = job.as_ref() {
        return Err(ApiError::conflict(format!("job {} is running", j.id)));
    }
    let mut state = session.state.lock().unwrap();
    let mut next = (**state).clone();
    f(&mut next)?;
    next.revision += 1;
    *state = Arc::new(next);
    Ok(())
}

async fn put_roi(Sess(session): Sess, Json(roi): Json<Roi>) -> ApiResult<Json<SessionView>> {
    let roi = Roi::new(roi.x0, roi.y0, roi.width, roi.height)?;
    mutate(&session, |s| {
        roi.check_within(s.stack.width(), s.stack.height())?;
        s.set_roi(roi);
        Ok(())
    })?;
    Ok(Json(session_view(&session)))
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct ShiftDelta {
    ddx: f64,
    ddy: f64,
}

async fn patch_shift(
    Sess(session): Sess,
    Path(k): Path<usize>,
    Json(d): Json<ShiftDelta>,
) -> ApiResult<Json<SessionView>> {
    mutate(&session, |s| {
        let (Some(plan), Some(shifted)) = (s.plan.as_ref(), s.shifted.as_ref()) else {
            return Err(ApiError::conflict("no alignment plan yet; POST /align first"));
        };
        if k >= plan.len() {
            return Err(ApiError::not_found(format!("frame {k} outside 0..{}", plan.len())));
        }
        let plan = nudge(plan, k, d.ddx, d.ddy)?;
        let sh = plan.shifts[k];
        let mut frames = shifted.frames().to_vec();
        frames[k] = apply_shift(s.stack.frame(k), sh.dx, sh.dy, s.fill)?;
        s.shifted = Some(Arc::new(shifted.with_frames(frames)?));
        s.plan = Some(Arc::new(plan));
        s.volume = None;
        s.stage = SessionStage::Aligned;
        Ok(())
    })?;
    Ok(Json(session_view(&session)))
}

async fn get_track(Sess(session): Sess, Query(q): Query<HashMap<String, String>>, headers: HeaderMap) -> ApiResult<Response> {
    let s = session.snapshot();
    let track = s.track.as_ref().ok_or_else(|| ApiError::conflict("no track yet; POST /detect first"))?;
    let wants_csv = match q.get("format").map(String::as_str) {
        Some("csv") => true,
        Some("json") => false,
        Some(other) => return Err(ApiError::bad_request(format!("unknown format {other:?}"))),
        None => headers
            .get(header::ACCEPT)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|a| a.contains("text/csv")),
    };
    if wants_csv {
        Ok(([(header::CONTENT_TYPE, "text/csv")], track.to_csv()).into_response())
    } else {
        Ok(Json(&**track).into_response())
    }
}

/// Registers a job and runs `work` on the blocking pool. `work` returns the
/// mutation to commit; nothing changes if it fails or is cancelled.
fn start_job<W>(state: &AppState, session: &Arc<Session>, kind: JobKind, work: W) -> ApiResult<JobView>
where
    W: FnOnce(Arc<Snapshot>, &Job) -> nanoct::Result<Box<dyn FnOnce(&mut Snapshot) + Send>> + Send + 'static,
{
    let mut slot = session.job.lock().unwrap();
    if let Some(j) = slot.as_ref() {
        return Err(ApiError::conflict(format!("job {} is running", j.id)));
    }
    let job = Arc::new(Job {
        id: state.token("j"),
        session: session.id.clone(),
        kind,
        progress: AtomicU64::new(0f64.to_bits()),
        state: Mutex::new((JobState::Running, None)),
        cancel: AtomicBool::new(false),
    });
    *slot = Some(job.clone());
    state.inner.jobs.write().unwrap().insert(job.id.clone(), job.clone());
    let view = job.view();
    let snapshot = session.snapshot();
    let session = session.clone();
    drop(slot);

    tokio::task::spawn_blocking(move || {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| work(snapshot, &job)))
            .unwrap_or_else(|_| Err(Error::InvalidArgument("job panicked".into())));
        let mut slot = session.job.lock().unwrap();
        let outcome = match result {
            Ok(commit) => {
                let mut st = session.state.lock().unwrap();
                let mut next = (**st).clone();
                commit(&mut next);
                next.revision += 1;
                *st = Arc::new(next);
                job.report(1.0);
                (JobState::Done, None)
            }
            Err(Error::Cancelled) => (JobState::Cancelled, None),
            Err(e) => (JobState::Failed, Some(e.to_string())),
        };
        *slot = None;
        *job.state.lock().unwrap() = outcome;
    });
    Ok(view)
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct DetectRequest {
    method: Option<Method>,
    opts: LocatorOptions,
}

async fn post_detect(
    State(state): State<AppState>,
    Sess(session): Sess,
    body: Option<Json<DetectRequest>>,
) -> ApiResult<(StatusCode, Json<JobView>)> {
    let req = body.map(|b| b.0).unwrap_or_default();
    let method = req.method.unwrap_or(Method::Gvb);
    if method == Method::Manual {
        return Err(ApiError::bad_request("MANUAL is not a detector"));
    }
    let roi = session
        .snapshot()
        .roi
        .ok_or_else(|| ApiError::conflict("no ROI yet; PUT /roi first"))?;
    let view = start_job(&state, &session, JobKind::Detect, move |snap, job| {
        let track = track_reference_with_progress(&snap.stack, &roi, method, &req.opts, &|f| job.report(f))?;
        Ok(Box::new(move |s: &mut Snapshot| {
            s.track = Some(Arc::new(track));
            s.clear_plan();
            s.stage = SessionStage::Tracked;
        }))
    })?;
    Ok((StatusCode::ACCEPTED, Json(view)))
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct AlignRequest {
    mode: Option<AlignMode>,
    fill: Option<ShiftFill>,
    /// Rebuild the plan from the track even when one with the same mode
    /// exists (discarding manual nudges).
    rebuild: bool,
}

async fn post_align(
    State(state): State<AppState>,
    Sess(session): Sess,
    body: Option<Json<AlignRequest>>,
) -> ApiResult<(StatusCode, Json<JobView>)> {
    let req = body.map(|b| b.0).unwrap_or_default();
    let mode = req.mode.unwrap_or(AlignMode::Cosine);
    if session.snapshot().track.is_none() {
        return Err(ApiError::conflict("no track yet; POST /detect first"));
    }
    let view = start_job(&state, &session, JobKind::Align, move |snap, job| {
        let fill = req.fill.unwrap_or(snap.fill);
        let plan = match &snap.plan {
            Some(p) if p.mode == mode && !req.rebuild => (**p).clone(),
            _ => {
                let track = snap.track.as_ref().expect("checked before start");
                build_plan(track, snap.stack.width(), snap.stack.height(), mode)?
            }
        };
        let n = snap.stack.len();
        let done = AtomicU64::new(0);
        let frames = snap
            .stack
            .frames()
            .par_iter()
            .zip(&plan.shifts)
            .map(|(f, s)| {
                let img = apply_shift(f, s.dx, s.dy, fill)?;
                let k = done.fetch_add(1, Ordering::SeqCst) + 1;
                if !job.report(k as f64 / n as f64) {
                    return Err(Error::Cancelled);
                }
                Ok(img)
            })
            .collect::<nanoct::Result<Vec<Image>>>()?;
        let shifted = snap.stack.with_frames(frames)?;
        Ok(Box::new(move |s: &mut Snapshot| {
            s.plan = Some(Arc::new(plan));
            s.shifted = Some(Arc::new(shifted));
            s.fill = fill;
            s.volume = None;
            s.stage = SessionStage::Aligned;
        }))
    })?;
    Ok((StatusCode::ACCEPTED, Json(view)))
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconRequest {
    pub filter: Filter,
    pub interpolation: Interpolation,
    /// Defaults to the stack's first angle.
    pub angle_start: Option<f64>,
    /// Defaults to the stack's last angle.
    pub angle_stop: Option<f64>,
    pub output_size: Option<usize>,
    /// Inclusive rows of the cropped stack.
    pub row_range: Option<(usize, usize)>,
    pub attenuation: bool,
}

impl Default for ReconRequest {
    fn default() -> Self {
        ReconRequest {
            filter: Filter::RamLak,
            interpolation: Interpolation::Linear,
            angle_start: None,
            angle_stop: None,
            output_size: None,
            row_range: None,
            attenuation: true,
        }
    }
}

async fn post_reconstruct(
    State(state): State<AppState>,
    Sess(session): Sess,
    body: Option<Json<ReconRequest>>,
) -> ApiResult<(StatusCode, Json<JobView>)> {
    let req = body.map(|b| b.0).unwrap_or_default();
    let snap = session.snapshot();
    if snap.shifted.is_none() {
        return Err(ApiError::conflict("stack not aligned yet; POST /align first"));
    }
    let view = start_job(&state, &session, JobKind::Reconstruct, move |snap, job| {
        let plan = snap.plan.as_ref().expect("aligned implies a plan");
        let cropped = crop_stack(snap.shifted.as_ref().expect("aligned"), &plan.crop)?;
        let params = ReconParams {
            filter: req.filter,
            interpolation: req.interpolation,
            angle_start: req.angle_start.unwrap_or(cropped.angle_start()),
            angle_stop: req.angle_stop.unwrap_or(cropped.angle_stop()),
            output_size: req.output_size,
            row_range: req.row_range,
            attenuation: req.attenuation,
        };
        let vol = reconstruct_rows_with_progress(&cropped, &params, &|f| job.report(f))?;
        Ok(Box::new(move |s: &mut Snapshot| {
            s.volume = Some(Arc::new(vol));
            s.stage = SessionStage::Reconstructed;
        }))
    })?;
    Ok((StatusCode::ACCEPTED, Json(view)))
}

fn job(state: &AppState, id: &str) -> ApiResult<Arc<Job>> {
    state
        .inner
        .jobs
        .read()
        .unwrap()
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no job {id:?}")))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobView>> {
    Ok(Json(job(&state, &id)?.view()))
}

async fn cancel_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<(StatusCode, Json<JobView>)> {
    let j = job(&state, &id)?;
    if !j.running() {
        return Ok((StatusCode::OK, Json(j.view())));
    }
    j.cancel.store(true, Ordering::SeqCst);
    Ok((StatusCode::ACCEPTED, Json(j.view())))
}

fn png_response(bytes: Vec<u8>, etag: String, headers: &HeaderMap) -> Response {
    let etag = format!("\"{etag}\"");
    let fresh = headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v == etag);
    let mut resp = if fresh {
        StatusCode::NOT_MODIFIED.into_response()
    } else {
        ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
    };
    if let Ok(v) = HeaderValue::from_str(&etag) {
        resp.headers_mut().insert(header::ETAG, v);
    }
    resp.headers_mut()
        .insert(header::CACHE_CONTROL, HeaderValue::from_static("private, no-cache"));
    resp
}

fn strip_png(file: &str) -> ApiResult<&str> {
    file.strip_suffix(".png")
        .ok_or_else(|| ApiError::not_found(format!("{file:?} is not a .png resource")))
}

fn norm_param(q: &HashMap<String, String>, default: Normalize, full: f32) -> ApiResult<Normalize> {
    q.get("norm")
        .map(|s| Normalize::parse(s, full).map_err(ApiError::bad_request))
        .unwrap_or(Ok(default))
}

/// `?overlay=roi,circle,target&radius=r&norm=fixed|minmax&preview_shift=dx,dy&aligned=1`
async fn projection_png(
    Sess(session): Sess,
    Path(file): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let k: usize = strip_png(&file)?
        .parse()
        .map_err(|_| ApiError::not_found(format!("bad frame index in {file:?}")))?;
    let s = session.snapshot();
    if k >= s.stack.len() {
        return Err(ApiError::not_found(format!("frame {k} outside 0..{}", s.stack.len())));
    }
    let norm = norm_param(&q, Normalize::Fixed(s.stack.depth_max()), s.stack.depth_max())?;
    let radius = match q.get("radius") {
        Some(r) => r
            .parse::<f64>()
            .ok()
            .filter(|r| r.is_finite() && *r > 0.0)
            .ok_or_else(|| ApiError::bad_request(format!("bad radius {r:?}")))?,
        None => 6.0,
    };
    let aligned = q.get("aligned").is_some_and(|v| v == "1" || v == "true");
    let mut frame = match (&s.shifted, aligned) {
        (Some(sh), true) => sh.frame(k).clone(),
        (None, true) => return Err(ApiError::conflict("stack not aligned yet")),
        _ => s.stack.frame(k).clone(),
    };
    if let Some(p) = q.get("preview_shift") {
        let (dx, dy) = parse_pair(p).map_err(ApiError::bad_request)?;
        frame = apply_shift(&frame, dx, dy, s.fill)?;
    }
    let mut canvas = Canvas::from_image(&frame, norm);
    for item in q.get("overlay").map(String::as_str).unwrap_or("").split(',') {
        match item.trim() {
            "" => {}
            "roi" => {
                if let Some(r) = &s.roi {
                    canvas.rect(r, ROI_COLOR);
                }
            }
            "circle" => {
                if let Some(e) = s.track.as_ref().map(|t| &t.entries[k]).filter(|e| e.hit) {
                    canvas.circle(e.center_x, e.center_y, radius, CIRCLE_COLOR);
                }
            }
            "target" => {
                if let Some(p) = &s.plan {
                    canvas.circle(p.targets_x[k], p.target_y, radius, TARGET_COLOR);
                }
            }
            other => return Err(ApiError::bad_request(format!("unknown overlay {other:?}"))),
        }
    }
    Ok(png_response(canvas.png(), format!("{}-{}", session.id, s.revision), &headers))
}

async fn trail_png(
    Sess(session): Sess,
    Query(q): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let delta: f32 = match q.get("delta") {
        Some(d) => d
            .parse()
            .ok()
            .filter(|d: &f32| d.is_finite() && *d >= 0.0)
            .ok_or_else(|| ApiError::bad_request(format!("bad delta {d:?}")))?,
        None => 40.0,
    };
    let s = session.snapshot();
    let stack = s.stack.clone();
    let png = tokio::task::spawn_blocking(move || gray_png(&trail_product(&stack, delta).mask.to_image(), Normalize::Fixed(1.0)))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(png_response(png, format!("{}-trail", session.id), &headers))
}

async fn slice_png(
    Sess(session): Sess,
    Path((axis, file)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let index: usize = strip_png(&file)?
        .parse()
        .map_err(|_| ApiError::not_found(format!("bad slice index in {file:?}")))?;
    let s = session.snapshot();
    let vol = s.volume.as_ref().ok_or_else(|| ApiError::conflict("no volume yet; POST /reconstruct first"))?;
    let img = match axis.as_str() {
        "axial" => vol.axial(index),
        "coronal" => vol.coronal(index),
        "sagittal" => vol.sagittal(index),
        other => return Err(ApiError::not_found(format!("unknown axis {other:?}"))),
    }
    .map_err(|e| ApiError::not_found(e.to_string()))?;
    let norm = norm_param(&q, Normalize::MinMax, 1.0)?;
    Ok(png_response(gray_png(&img, norm), format!("{}-{}", session.id, s.revision), &headers))
}

async fn volume_raw(Sess(session): Sess) -> ApiResult<Response> {
    let s = session.snapshot();
    let vol = s.volume.as_ref().ok_or_else(|| ApiError::conflict("no volume yet; POST /reconstruct first"))?;
    let (nx, ny, nz) = vol.dims();
    let bytes: Vec<u8> = vol.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut resp = Response::new(Body::from(bytes));
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    h.insert(
        "x-volume-dims",
        HeaderValue::from_str(&format!("{nx},{ny},{nz}")).expect("ascii"),
    );
    Ok(resp)
}
