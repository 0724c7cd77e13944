//! Pairwise text similarity and top-k candidate generation.
//!
//! Three backends score canonical texts into `[0, 1]`:
//!
//! * `char_ngram`: cosine of TF-IDF weighted character n-gram vectors. Document
//!   frequencies are taken over the distinct classes being compared.
//! * `levenshtein`: `1 - dist(a, b) / max(|a|, |b|)` over Unicode scalars.
//! * `external_embedding`: cosine of vectors from an HTTP provider, mapped from
//!   `[-1, 1]` to `[0, 1]` with `(x + 1) / 2`.
//!
//! Candidate generation keeps, for every class, its `k` best-scoring other
//! classes. Ties go to the smaller class position.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::normalize::ExactClasses;

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_NGRAM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    CharNgram,
    Levenshtein,
    ExternalEmbedding,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::CharNgram => "char-ngram",
            BackendKind::Levenshtein => "levenshtein",
            BackendKind::ExternalEmbedding => "external",
        })
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char-ngram" | "char_ngram" => Ok(BackendKind::CharNgram),
            "levenshtein" => Ok(BackendKind::Levenshtein),
            "external" | "external_embedding" => Ok(BackendKind::ExternalEmbedding),
            other => Err(Error::Usage(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// N-gram size, used by `char_ngram` only.
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl BackendConfig {
    pub fn char_ngram(n: usize) -> Self {
        BackendConfig {
            kind: BackendKind::CharNgram,
            n,
            endpoint: None,
        }
    }

    pub fn levenshtein() -> Self {
        BackendConfig {
            kind: BackendKind::Levenshtein,
            n: DEFAULT_NGRAM,
            endpoint: None,
        }
    }

    pub fn external(endpoint: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::ExternalEmbedding,
            n: DEFAULT_NGRAM,
            endpoint: Some(endpoint.into()),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::OutOfRange {
                what: "n-gram size",
                message: "n must be at least 1".into(),
            });
        }
        match (self.kind, &self.endpoint) {
            (BackendKind::ExternalEmbedding, None) => {
                Err(Error::Usage("the external backend needs an endpoint".into()))
            }
            (BackendKind::ExternalEmbedding, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::Usage(format!(
                "an endpoint is only meaningful for the external backend, not {}",
                self.kind
            ))),
            (_, None) => Ok(()),
        }
    }
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::char_ngram(DEFAULT_NGRAM)
    }
}

/// Edit distance over Unicode scalar values with unit costs.
pub fn levenshtein_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein_distance(a, b) as f64 / longest as f64
}

/// Character n-grams of `text`. A text shorter than `n` yields itself.
pub fn char_ngrams(text: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() <= n {
        return vec![text.to_string()];
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

type SparseVec = Vec<(u32, f64)>;

/// Unit-length TF-IDF character n-gram vectors over a fixed set of texts.
#[derive(Debug, Clone)]
pub struct NgramIndex {
    vectors: Vec<SparseVec>,
    postings: Vec<Vec<(u32, f64)>>,
}

impl NgramIndex {
    pub fn build<S: AsRef<str>>(texts: &[S], n: usize) -> Self {
        let grams: Vec<Vec<String>> = texts.iter().map(|t| char_ngrams(t.as_ref(), n)).collect();

        // Gram ids follow lexicographic order so every dot product sums in
        // the same order whichever side it starts from.
        let mut vocab: BTreeMap<&str, u32> = BTreeMap::new();
        for g in grams.iter().flatten() {
            vocab.entry(g.as_str()).or_insert(0);
        }
        for (id, v) in vocab.values_mut().enumerate() {
            *v = id as u32;
        }

        let mut df = vec![0usize; vocab.len()];
        let counts: Vec<BTreeMap<u32, usize>> = grams
            .iter()
            .map(|gs| {
                let mut m = BTreeMap::new();
                for g in gs {
                    *m.entry(vocab[g.as_str()]).or_insert(0) += 1;
                }
                for id in m.keys() {
                    df[*id as usize] += 1;
                }
                m
            })
            .collect();

        let docs = texts.len() as f64;
        let idf: Vec<f64> = df
            .iter()
            .map(|&d| ((1.0 + docs) / (1.0 + d as f64)).ln() + 1.0)
            .collect();

        let vectors: Vec<SparseVec> = counts
            .iter()
            .map(|m| {
                let raw: SparseVec = m
                    .iter()
                    .map(|(&id, &tf)| (id, tf as f64 * idf[id as usize]))
                    .collect();
                let norm = raw.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
                raw.into_iter().map(|(id, w)| (id, w / norm)).collect()
            })
            .collect();

        let mut postings = vec![Vec::new(); vocab.len()];
        for (doc, v) in vectors.iter().enumerate() {
            for &(id, w) in v {
                postings[id as usize].push((doc as u32, w));
            }
        }

        NgramIndex { vectors, postings }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        sparse_dot(&self.vectors[a], &self.vectors[b]).clamp(0.0, 1.0)
    }

    /// Cosine of `doc` against every indexed text, written into `out`.
    fn cosine_row(&self, doc: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for &(id, w) in &self.vectors[doc] {
            for &(other, w2) in &self.postings[id as usize] {
                out[other as usize] += w * w2;
            }
        }
        out.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
    }
}

fn sparse_dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

fn embedding_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        // Multiply norms in a fixed order so the result is symmetric.
        let (lo, hi) = if na <= nb { (na, nb) } else { (nb, na) };
        (dot / (lo * hi)).clamp(-1.0, 1.0)
    };
    (cos + 1.0) / 2.0
}

/// Produces one vector per input text, all of one dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Vectors keyed by (endpoint, SHA-256 of text).
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct EmbeddingCache {
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingCache {
    pub fn key(endpoint: &str, text: &str) -> String {
        let digest = Sha256::digest(text.as_bytes());
        format!("{endpoint} {}", hex::encode(digest))
    }

    pub fn get(&self, endpoint: &str, text: &str) -> Option<&Vec<f64>> {
        self.entries.get(&Self::key(endpoint, text))
    }

    pub fn insert(&mut self, endpoint: &str, text: &str, vector: Vec<f64>) {
        self.entries.insert(Self::key(endpoint, text), vector);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        drop(w);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

/// Client for `POST {endpoint}/embed`.
///
/// Texts are sent in batches of `batch_size`, at most `max_in_flight` batches
/// at a time. Failed requests are retried `retries` times.
pub struct HttpEmbeddingProvider {
    endpoint: String,
    agent: ureq::Agent,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retries: usize,
    token: Option<String>,
    cache: Mutex<EmbeddingCache>,
}

impl HttpEmbeddingProvider {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpEmbeddingProvider {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent,
            batch_size: 64,
            max_in_flight: 4,
            retries: 2,
            token: None,
            cache: Mutex::new(EmbeddingCache::default()),
        }
    }

    /// Sent as `Authorization: Bearer <token>`.
    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn with_cache(self, cache: EmbeddingCache) -> Self {
        *self.cache.lock().unwrap() = cache;
        self
    }

    pub fn cache(&self) -> EmbeddingCache {
        self.cache.lock().unwrap().clone()
    }

    fn provider_error(&self, message: String, excerpt: &str, completed: usize) -> Error {
        Error::Provider {
            endpoint: self.endpoint.clone(),
            message,
            excerpt: excerpt.chars().take(200).collect(),
            completed,
        }
    }

    fn request(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, (String, String)> {
        let url = format!("{}/embed", self.endpoint);
        let payload = serde_json::to_string(&EmbedRequest { texts }).unwrap_or_default();
        let mut last = (String::new(), payload.clone());
        for _ in 0..=self.retries {
            let mut req = self.agent.post(&url).header("content-type", "application/json");
            if let Some(token) = &self.token {
                req = req.header("authorization", format!("Bearer {token}"));
            }
            let mut resp = match req.send(payload.as_str()) {
                Ok(r) => r,
                Err(e) => {
                    last = (format!("request failed: {e}"), payload.clone());
                    continue;
                }
            };
            let status = resp.status();
            let body = match resp.body_mut().read_to_string() {
                Ok(b) => b,
                Err(e) => {
                    last = (format!("cannot read response: {e}"), payload.clone());
                    continue;
                }
            };
            if !status.is_success() {
                last = (format!("HTTP {status}"), body);
                if status.is_client_error() {
                    break;
                }
                continue;
            }
            return match serde_json::from_str::<EmbedResponse>(&body) {
                Ok(r) if r.vectors.len() == texts.len() => Ok(r.vectors),
                Ok(r) => Err((
                    format!("expected {} vectors, got {}", texts.len(), r.vectors.len()),
                    body,
                )),
                Err(e) => Err((format!("malformed response: {e}"), body)),
            };
        }
        Err(last)
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut out: Vec<Option<Vec<f64>>> = {
            let cache = self.cache.lock().unwrap();
            texts
                .iter()
                .map(|t| cache.get(&self.endpoint, t).cloned())
                .collect()
        };
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        let batches: Vec<&[usize]> = missing.chunks(self.batch_size.max(1)).collect();
        let mut completed = texts.len() - missing.len();

        for window in batches.chunks(self.max_in_flight.max(1)) {
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = window
                    .iter()
                    .map(|batch| {
                        let batch_texts: Vec<String> = batch.iter().map(|&i| texts[i].clone()).collect();
                        s.spawn(move || self.request(&batch_texts))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            for (batch, result) in window.iter().zip(results) {
                let vectors = result.map_err(|(msg, excerpt)| self.provider_error(msg, &excerpt, completed))?;
                let mut cache = self.cache.lock().unwrap();
                for (&i, v) in batch.iter().zip(vectors) {
                    cache.insert(&self.endpoint, &texts[i], v.clone());
                    out[i] = Some(v);
                }
                completed += batch.len();
            }
        }

        let vectors: Vec<Vec<f64>> = out.into_iter().map(Option::unwrap).collect();
        if let Some(first) = vectors.first() {
            if let Some(bad) = vectors.iter().position(|v| v.len() != first.len()) {
                return Err(self.provider_error(
                    format!(
                        "inconsistent vector dimension: {} vs {} at text {bad}",
                        first.len(),
                        vectors[bad].len()
                    ),
                    &texts[bad],
                    completed,
                ));
            }
        }
        Ok(vectors)
    }
}

/// Scores between a fixed list of texts, addressed by position.
pub enum Scorer {
    CharNgram(NgramIndex),
    Levenshtein(Vec<String>),
    Embedding(Vec<Vec<f64>>),
}

impl Scorer {
    /// Builds a scorer. `provider` is only consulted for the external backend;
    /// when absent an HTTP client for the configured endpoint is used.
    pub fn build<S: AsRef<str>>(
        texts: &[S],
        backend: &BackendConfig,
        provider: Option<&dyn EmbeddingProvider>,
    ) -> Result<Self> {
        backend.check()?;
        Ok(match backend.kind {
            BackendKind::CharNgram => Scorer::CharNgram(NgramIndex::build(texts, backend.n)),
            BackendKind::Levenshtein => {
                Scorer::Levenshtein(texts.iter().map(|t| t.as_ref().to_string()).collect())
            }
            BackendKind::ExternalEmbedding => {
                let owned: Vec<String> = texts.iter().map(|t| t.as_ref().to_string()).collect();
                let vectors = match provider {
                    Some(p) => p.embed(&owned)?,
                    None => HttpEmbeddingProvider::new(backend.endpoint.clone().unwrap_or_default())
                        .embed(&owned)?,
                };
                if vectors.len() != owned.len() {
                    return Err(Error::Provider {
                        endpoint: backend.endpoint.clone().unwrap_or_default(),
                        message: format!("expected {} vectors, got {}", owned.len(), vectors.len()),
                        excerpt: String::new(),
                        completed: vectors.len(),
                    });
                }
                Scorer::Embedding(vectors)
            }
        })
    }

    pub fn len(&self) -> usize {
        match self {
            Scorer::CharNgram(ix) => ix.len(),
            Scorer::Levenshtein(t) => t.len(),
            Scorer::Embedding(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn score(&self, a: usize, b: usize) -> f64 {
        match self {
            Scorer::CharNgram(ix) => ix.cosine(a, b),
            Scorer::Levenshtein(t) => {
                if t[a] == t[b] {
                    1.0
                } else {
                    levenshtein_similarity(&t[a], &t[b])
                }
            }
            Scorer::Embedding(v) => embedding_similarity(&v[a], &v[b]),
        }
    }

    fn row(&self, a: usize, out: &mut [f64]) {
        match self {
            Scorer::CharNgram(ix) => ix.cosine_row(a, out),
            _ => {
                for (b, slot) in out.iter_mut().enumerate() {
                    *slot = if a == b { 1.0 } else { self.score(a, b) };
                }
            }
        }
    }
}

/// Similarity of two canonical texts. The char n-gram backend takes its
/// document frequencies from the two texts themselves.
pub fn score(a: &str, b: &str, backend: &BackendConfig) -> Result<f64> {
    if a == b {
        return Ok(1.0);
    }
    let scorer = Scorer::build(&[a, b], backend, None)?;
    Ok(scorer.score(0, 1))
}

/// Canonical id of the unordered pair `{a, b}`.
pub fn pair_key(a: usize, b: usize) -> String {
    format!("{}-{}", a.min(b), a.max(b))
}

/// Splits a pair key back into `(min, max)` class positions.
pub fn parse_pair_key(key: &str) -> Option<(usize, usize)> {
    let (a, b) = key.split_once('-')?;
    let (a, b): (usize, usize) = (a.parse().ok()?, b.parse().ok()?);
    (a < b).then_some((a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub left_class: usize,
    pub right_class: usize,
    pub score: f64,
    /// 1-based rank of `right_class` among the neighbours of `left_class`.
    pub rank: usize,
    pub pair_key: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub pairs: Vec<CandidatePair>,
    pub k: usize,
    pub backend: BackendConfig,
    pub warnings: Vec<String>,
}

impl CandidateSet {
    /// Distinct pair keys in first-emission order.
    pub fn pair_keys(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.pairs
            .iter()
            .filter(|p| seen.insert(p.pair_key.as_str()))
            .map(|p| p.pair_key.as_str())
            .collect()
    }

    /// First row emitted for each pair key.
    pub fn by_key(&self) -> HashMap<&str, &CandidatePair> {
        let mut m = HashMap::new();
        for p in &self.pairs {
            m.entry(p.pair_key.as_str()).or_insert(p);
        }
        m
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for p in &self.pairs {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path, k: usize, backend: BackendConfig) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            pairs.push(serde_json::from_str(&line).map_err(|e| Error::Input {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(CandidateSet {
            pairs,
            k,
            backend,
            warnings: Vec::new(),
        })
    }
}

/// Top-k neighbours of every exact class under `backend`.
pub fn top_k_candidates(classes: &ExactClasses, backend: &BackendConfig, k: usize) -> Result<CandidateSet> {
    let scorer = Scorer::build(&classes.texts(), backend, None)?;
    top_k_with(&scorer, backend, k)
}

/// Top-k neighbours using an already-built scorer.
pub fn top_k_with(scorer: &Scorer, backend: &BackendConfig, k: usize) -> Result<CandidateSet> {
    let d = scorer.len();
    if d < 2 {
        return Err(Error::InsufficientData(format!(
            "candidate generation needs at least 2 classes, got {d}"
        )));
    }
    if k == 0 {
        return Err(Error::OutOfRange {
            what: "k",
            message: "k must be at least 1".into(),
        });
    }
    let mut warnings = Vec::new();
    let per_class = if k >= d {
        let msg = format!("k = {k} is not below the class count {d}; emitting {} neighbours per class", d - 1);
        log::warn!("{msg}");
        warnings.push(msg);
        d - 1
    } else {
        k
    };

    let rows: Vec<Vec<CandidatePair>> = (0..d)
        .into_par_iter()
        .map_init(
            || vec![0.0; d],
            |buf, left| {
                scorer.row(left, buf);
                best_neighbours(buf, left, per_class)
                    .into_iter()
                    .enumerate()
                    .map(|(i, (right, score))| CandidatePair {
                        left_class: left,
                        right_class: right,
                        score,
                        rank: i + 1,
                        pair_key: pair_key(left, right),
                    })
                    .collect()
            },
        )
        .collect();

    Ok(CandidateSet {
        pairs: rows.into_iter().flatten().collect(),
        k,
        backend: backend.clone(),
        warnings,
    })
}

/// Scores closer than this are tied. Mathematically equal cosines can differ
/// in the last bits depending on summation order.
pub const SCORE_TIE: f64 = 1e-12;

/// The `m` highest scores in `row` other than `skip`, descending, ties to the
/// lower position.
fn best_neighbours(row: &[f64], skip: usize, m: usize) -> Vec<(usize, f64)> {
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(m + 1);
    for (j, &s) in row.iter().enumerate() {
        if j == skip {
            continue;
        }
        // Scanning in ascending j, a later entry only displaces on a clearly
        // higher score.
        if best.len() == m && s - best[m - 1].1 <= SCORE_TIE {
            continue;
        }
        let at = best.iter().position(|&(_, b)| s - b > SCORE_TIE).unwrap_or(best.len());
        best.insert(at, (j, s));
        best.truncate(m);
    }
    best
}
