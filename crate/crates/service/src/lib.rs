//! HTTP facade over a built pipeline: frame listing, graph inspection, and
//! on-demand resequencing with an in-memory sequence registry.

mod error;

use std::collections::{BTreeMap, HashSet};
use std::io::Cursor;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use reseq_core::eval::{evaluate_path, EvaluationReport, OverlapStrategy};
use reseq_core::graph::content_candidates;
use reseq_core::media_io::Frame;
use reseq_core::pipeline::Pipeline;
use reseq_core::sdpf::{SdpfParams, StepRecord, StopReason, TerminalRecord};

pub use error::ApiError;

pub const THUMBNAIL_MAX_SIDE: usize = 128;
const HISTOGRAM_BINS: usize = 20;

/// A loaded dataset plus everything generated against it.
pub struct Session {
    pipeline: Arc<Pipeline>,
    thumbnails: Vec<Vec<u8>>,
    sequences: Mutex<BTreeMap<String, Arc<SequenceResponse>>>,
}

impl Session {
    /// Renders thumbnails up front so scrubbing never waits on encoding.
    pub fn new(pipeline: Pipeline) -> Result<Self, ApiError> {
        let thumbnails = pipeline
            .frames()
            .frames()
            .iter()
            .map(thumbnail_png)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            pipeline: Arc::new(pipeline),
            thumbnails,
            sequences: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn sequence(&self, id: &str) -> Option<Arc<SequenceResponse>> {
        self.sequences.lock().unwrap().get(id).cloned()
    }

    pub fn sequence_count(&self) -> usize {
        self.sequences.lock().unwrap().len()
    }

    fn register(&self, build: impl FnOnce(String) -> SequenceResponse) -> Arc<SequenceResponse> {
        let mut seqs = self.sequences.lock().unwrap();
        let id = format!("seq-{}", seqs.len() + 1);
        let record = Arc::new(build(id.clone()));
        seqs.insert(id, record.clone());
        record
    }
}

fn thumbnail_png(frame: &Frame) -> Result<Vec<u8>, ApiError> {
    let (w, h) = frame.dims();
    let scale = (THUMBNAIL_MAX_SIDE as f64 / w.max(h) as f64).min(1.0);
    let (tw, th) = (
        ((w as f64 * scale).round() as usize).max(1),
        ((h as f64 * scale).round() as usize).max(1),
    );
    let small = if (tw, th) == (w, h) {
        frame.clone()
    } else {
        frame.resize_bilinear(tw, th)
    };
    let mut out = Vec::new();
    small
        .to_rgb8()
        .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|e| ApiError::Core(reseq_core::Error::Io(std::io::Error::other(e))))?;
    Ok(out)
}

/// Shared handler state; `None` until a dataset is loaded.
#[derive(Clone, Default)]
pub struct AppState {
    session: Option<Arc<Session>>,
}

impl AppState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_pipeline(pipeline: Pipeline) -> Result<Self, ApiError> {
        Ok(Self {
            session: Some(Arc::new(Session::new(pipeline)?)),
        })
    }

    pub fn session(&self) -> Result<&Arc<Session>, ApiError> {
        self.session.as_ref().ok_or(ApiError::NoDatasetLoaded)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub index: usize,
    pub name: String,
    pub thumbnail_url: String,
    pub is_lms: bool,
    /// `null` when the frame has no dominant motion.
    pub tendency_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub index: usize,
    pub weight: f64,
    pub below_eta: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphResponse {
    Neighbors {
        n: usize,
        eta: f64,
        node: usize,
        neighbors: Vec<NeighborEntry>,
    },
    Summary {
        n: usize,
        eta: f64,
        edges: usize,
        histogram: Vec<HistogramBin>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct GraphQuery {
    pub neighbors_of: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResequenceRequest {
    pub start: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub disable_cd: Option<bool>,
    #[serde(default)]
    pub disable_ct: Option<bool>,
    #[serde(default)]
    pub max_length: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub params: SdpfParams,
    pub steps: Vec<StepRecord>,
    pub terminal: TerminalRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResponse {
    pub sequence_id: String,
    pub start: usize,
    pub seed: u64,
    pub indices: Vec<usize>,
    pub stop_reason: StopReason,
    pub diagnostics: Diagnostics,
}

async fn frames(State(state): State<AppState>) -> Result<Json<Vec<FrameEntry>>, ApiError> {
    let session = state.session()?;
    let p = session.pipeline();
    let ctx = p.context();
    let entries = (0..p.frames().len())
        .map(|i| FrameEntry {
            index: i,
            name: p.frames().names()[i].clone(),
            thumbnail_url: format!("/thumb/{i}"),
            is_lms: ctx.lms.is_lms[i],
            tendency_deg: ctx.tendencies[i].degrees(),
        })
        .collect();
    Ok(Json(entries))
}

async fn graph(State(state): State<AppState>, Query(q): Query<GraphQuery>) -> Result<Json<GraphResponse>, ApiError> {
    let session = state.session()?;
    let g = session.pipeline().graph();
    let n = g.len();
    let Some(node) = q.neighbors_of else {
        return Ok(Json(GraphResponse::Summary {
            n,
            eta: g.eta(),
            edges: n * (n - 1) / 2,
            histogram: histogram(&g.export().upper_triangle),
        }));
    };
    let s1 = content_candidates(g, node, &HashSet::new())?.nodes;
    let neighbors = (0..n)
        .filter(|&j| j != node)
        .map(|j| NeighborEntry {
            index: j,
            weight: g.weight(node, j),
            below_eta: s1.binary_search(&j).is_ok(),
        })
        .collect();
    Ok(Json(GraphResponse::Neighbors {
        n,
        eta: g.eta(),
        node,
        neighbors,
    }))
}

/// Equal-width bins over `[0, max]`.
fn histogram(weights: &[f64]) -> Vec<HistogramBin> {
    let max = weights.iter().copied().fold(0.0, f64::max);
    let width = if max > 0.0 { max / HISTOGRAM_BINS as f64 } else { 1.0 };
    let mut counts = [0usize; HISTOGRAM_BINS];
    for &w in weights {
        let b = ((w / width) as usize).min(HISTOGRAM_BINS - 1);
        counts[b] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramBin {
            lo: i as f64 * width,
            hi: (i + 1) as f64 * width,
            count,
        })
        .collect()
}

async fn resequence(
    State(state): State<AppState>,
    Json(req): Json<ResequenceRequest>,
) -> Result<Json<SequenceResponse>, ApiError> {
    let session = state.session()?.clone();
    let base = session.pipeline().resequencer().params().clone();
    let seed = req.seed.unwrap_or_else(rand::random);
    let params = SdpfParams {
        seed,
        temperature: req.temperature.unwrap_or(base.temperature),
        disable_cd: req.disable_cd.unwrap_or(base.disable_cd),
        disable_ct: req.disable_ct.unwrap_or(base.disable_ct),
        max_length: req.max_length.or(base.max_length),
        ..base
    };
    let pipeline = session.pipeline.clone();
    let start = req.start;
    let path = tokio::task::spawn_blocking(move || pipeline.resequence_with(start, &params))
        .await
        .map_err(|e| ApiError::Join(e.to_string()))??;
    let record = session.register(|sequence_id| SequenceResponse {
        sequence_id,
        start,
        seed: path.seed,
        indices: path.indices,
        stop_reason: path.stop_reason,
        diagnostics: Diagnostics {
            params: path.params,
            steps: path.steps,
            terminal: path.terminal,
        },
    });
    Ok(Json((*record).clone()))
}

async fn sequence(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SequenceResponse>, ApiError> {
    let session = state.session()?;
    let record = session.sequence(&id).ok_or(ApiError::UnknownSequence(id))?;
    Ok(Json((*record).clone()))
}

async fn evaluate(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<EvaluationReport>, ApiError> {
    let session = state.session()?;
    let record = session.sequence(&id).ok_or_else(|| ApiError::UnknownSequence(id.clone()))?;
    let report = evaluate_path(id, session.pipeline().frames(), &record.indices, OverlapStrategy::Runs)?;
    Ok(Json(report))
}

async fn thumbnail(State(state): State<AppState>, Path(index): Path<usize>) -> Result<impl IntoResponse, ApiError> {
    let session = state.session()?;
    let n = session.thumbnails.len();
    let png = session
        .thumbnails
        .get(index)
        .ok_or(ApiError::FrameOutOfRange { index, n })?
        .clone();
    Ok(([(header::CONTENT_TYPE, "image/png")], png))
}

/// CORS policy: a fixed list of origins, or any origin when the list is empty.
pub fn cors_layer(origins: &[String]) -> CorsLayer {
    let base = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    if origins.is_empty() {
        return base.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    base.allow_origin(AllowOrigin::list(list))
}

pub fn router(state: AppState) -> Router {
    router_with_cors(state, &[])
}

pub fn router_with_cors(state: AppState, origins: &[String]) -> Router {
    Router::new()
        .route("/api/frames", get(frames))
        .route("/api/graph", get(graph))
        .route("/api/resequence", post(resequence))
        .route("/api/sequence/{id}", get(sequence))
        .route("/api/evaluate/{id}", get(evaluate))
        .route("/thumb/{index}", get(thumbnail))
        .layer(cors_layer(origins))
        .with_state(state)
}

/// Binds and serves until `shutdown` resolves.
pub async fn serve(
    state: AppState,
    addr: SocketAddr,
    origins: &[String],
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router_with_cors(state, origins))
        .with_graceful_shutdown(shutdown)
        .await
}
