//! Local HTTP API through which annotators judge candidate pairs.
//!
//! All writes go through one mutex-guarded appender, so concurrent browser
//! sessions never interleave partial lines in the verdict log.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::adjudication::{agreement, Agreement, Decision, Verdict, VerdictLog, VerdictLogFile};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::normalize::ExactClasses;
use crate::similarity::{parse_pair_key, CandidateSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSide {
    pub class_id: usize,
    pub text: String,
    /// Titles of the items the class was observed in.
    pub titles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairView {
    pub pair_key: String,
    pub left: PairSide,
    pub right: PairSide,
    pub score: f64,
    pub rank: usize,
    pub prior: Option<Decision>,
    /// 0-based position in the review queue.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextPair {
    pub pair: Option<PairView>,
    pub judged: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRequest {
    pub pair_key: String,
    pub decision: Decision,
    pub annotator_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictResponse {
    /// False when the decision already was the annotator's effective one.
    pub appended: bool,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub a: String,
    pub b: String,
    pub percent: f64,
    pub kappa: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub entries: usize,
    pub judged: BTreeMap<String, usize>,
    pub agreement: Vec<AgreementRow>,
}

pub struct ReviewState {
    queue: Vec<String>,
    views: BTreeMap<String, (PairSide, PairSide, f64, usize)>,
    log: VerdictLog,
    file: VerdictLogFile,
}

impl ReviewState {
    /// Replays the verdict file, if any, against the candidate set.
    pub fn new(corpus: &Corpus, exact: &ExactClasses, candidates: &CandidateSet, file: VerdictLogFile) -> Result<Self> {
        let records: BTreeMap<&str, &str> = corpus.records.iter().map(|r| (r.record_id.as_str(), r.item_id.as_str())).collect();
        let side = |class_id: usize| -> Result<PairSide> {
            let class = exact
                .classes
                .get(class_id)
                .ok_or_else(|| Error::Reference(format!("candidate class {class_id} is not an exact class")))?;
            let mut titles = Vec::new();
            let mut seen = BTreeSet::new();
            for rid in &class.source_record_ids {
                let item = records.get(rid.as_str()).and_then(|id| corpus.item(id));
                if let Some(item) = item {
                    if seen.insert(item.item_id.as_str()) {
                        titles.push(item.title.clone());
                    }
                }
            }
            Ok(PairSide {
                class_id,
                text: class.value.clone(),
                titles,
            })
        };

        let by_key = candidates.by_key();
        let queue: Vec<String> = candidates.pair_keys().into_iter().map(String::from).collect();
        let mut views = BTreeMap::new();
        for key in &queue {
            let (a, b) = parse_pair_key(key).ok_or_else(|| Error::Validation(format!("malformed pair key {key:?}")))?;
            let p = by_key[key.as_str()];
            views.insert(key.clone(), (side(a)?, side(b)?, p.score, p.rank));
        }
        let log = VerdictLog::for_candidates(candidates).with_entries(file.read()?)?;
        Ok(ReviewState { queue, views, log, file })
    }

    pub fn log(&self) -> &VerdictLog {
        &self.log
    }

    fn view(&self, position: usize, prior: Option<Decision>) -> PairView {
        let key = &self.queue[position];
        let (left, right, score, rank) = self.views[key].clone();
        PairView {
            pair_key: key.clone(),
            left,
            right,
            score,
            rank,
            prior,
            position,
        }
    }

    /// First queued pair the annotator has not judged.
    pub fn next_for(&self, annotator_id: &str) -> NextPair {
        let mine = self.log.effective_for(annotator_id);
        let pair = self
            .queue
            .iter()
            .position(|k| !mine.contains_key(k.as_str()))
            .map(|i| self.view(i, None));
        NextPair {
            pair,
            judged: mine.len(),
            total: self.queue.len(),
        }
    }

    /// Appends unless the decision equals the annotator's effective one.
    pub fn submit(&mut self, req: VerdictRequest) -> Result<VerdictResponse> {
        if req.annotator_id.trim().is_empty() {
            return Err(Error::Validation("annotator_id is empty".into()));
        }
        if !self.log.is_known(&req.pair_key) {
            return Err(Error::Reference(format!("pair {:?} is not a candidate pair", req.pair_key)));
        }
        let current = self
            .log
            .entries()
            .iter()
            .rev()
            .find(|v| v.pair_key == req.pair_key && v.annotator_id == req.annotator_id);
        if let Some(v) = current.filter(|v| v.decision == req.decision) {
            return Ok(VerdictResponse {
                appended: false,
                verdict: v.clone(),
            });
        }
        let verdict = Verdict {
            pair_key: req.pair_key,
            decision: req.decision,
            annotator_id: req.annotator_id,
            timestamp: Utc::now(),
        };
        // Disk first: a verdict is only acknowledged once it is durable.
        self.file.append(&verdict)?;
        self.log.push(verdict.clone())?;
        Ok(VerdictResponse {
            appended: true,
            verdict,
        })
    }

    pub fn progress(&self) -> Progress {
        let annotators: Vec<&str> = self.log.annotators().into_iter().collect();
        let judged = annotators
            .iter()
            .map(|a| (a.to_string(), self.log.effective_for(a).len()))
            .collect();
        let mut rows = Vec::new();
        for (i, a) in annotators.iter().enumerate() {
            for b in &annotators[i + 1..] {
                if let Ok(Agreement { percent, kappa, n }) = agreement(&self.log, a, b) {
                    rows.push(AgreementRow {
                        a: a.to_string(),
                        b: b.to_string(),
                        percent,
                        kappa,
                        n,
                    });
                }
            }
        }
        Progress {
            total: self.queue.len(),
            entries: self.log.entries().len(),
            judged,
            agreement: rows,
        }
    }
}

pub type SharedState = Arc<Mutex<ReviewState>>;

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Reference(_) => StatusCode::NOT_FOUND,
            Error::Validation(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn locked(state: &SharedState) -> std::sync::MutexGuard<'_, ReviewState> {
    // A panic mid-request leaves the log consistent: entries are pushed only
    // after the append succeeded.
    state.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
}

async fn next_pair(State(state): State<SharedState>, Query(q): Query<NextQuery>) -> Json<NextPair> {
    Json(locked(&state).next_for(&q.annotator))
}

async fn post_verdict(
    State(state): State<SharedState>,
    Json(req): Json<VerdictRequest>,
) -> std::result::Result<(StatusCode, Json<VerdictResponse>), ApiError> {
    let state = state.clone();
    let resp = tokio::task::spawn_blocking(move || locked(&state).submit(req))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let status = if resp.appended { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(resp)))
}

async fn progress(State(state): State<SharedState>) -> Json<Progress> {
    Json(locked(&state).progress())
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/pairs/next", get(next_pair))
        .route("/verdicts", post(post_verdict))
        .route("/progress", get(progress))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, state: SharedState) -> Result<()> {
    let addr = listener.local_addr().ok();
    log::info!("review API listening on {addr:?}");
    axum::serve(listener, router(state)).await.map_err(|e| Error::Io {
        path: addr.map(|a| a.to_string()).unwrap_or_default(),
        source: e,
    })
}

/// Blocking entry point: binds `addr` and serves on a fresh runtime.
pub fn serve_blocking(addr: SocketAddr, state: ReviewState) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io(addr.to_string(), e))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::io(addr.to_string(), e))?;
        serve(listener, Arc::new(Mutex::new(state))).await
    })
}
