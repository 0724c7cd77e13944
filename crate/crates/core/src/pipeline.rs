//! Workspace-directory pipeline behind the `genealogy` command.
//!
//! Each stage reads earlier artifacts from the workspace, writes its own and
//! records parameters plus SHA-256 hashes of every input and output in
//! `manifest.json`. Artifacts themselves carry no timestamps so that a re-run
//! with the same inputs is byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::adjudication::{
    agreement, auto_verdicts, build_equivalence, EquivalenceClasses, MergePolicy, Verdict, VerdictLog, VerdictLogFile,
};
use crate::characterize::{self, Group};
use crate::clustering::{agglomerate, cut, distance_matrix, Axis, Dendrogram, Linkage, Metric};
use crate::corpus::{load_corpus, validate, Corpus, CorpusFormat, ValidationReport};
use crate::error::{Error, Result};
use crate::matrix::{build_incidence_with, commonality, commonality_from_classes, read_incidence_csv, ColumnOrder, CommonalityMatrix, IncidenceMatrix};
use crate::normalize::{dedup_exact, ExactClasses};
use crate::render::{render_dendrogram, render_genealogy, render_profile, NodeWeight};
use crate::review::{serve_blocking, ReviewState};
use crate::similarity::{top_k_with, BackendConfig, BackendKind, CandidateSet, EmbeddingCache, HttpEmbeddingProvider, Scorer};

pub const MANIFEST: &str = "manifest.json";
pub const LOCK: &str = ".lock";
pub const CORPUS: &str = "corpus.json";
pub const VALIDATION: &str = "validation.json";
pub const EXACT: &str = "exact_classes.jsonl";
pub const CANDIDATES: &str = "candidates.jsonl";
pub const VERDICTS: &str = "verdicts.jsonl";
pub const EMBEDDING_CACHE: &str = "embedding_cache.json";
pub const EQUIVALENCE: &str = "equivalence.json";
pub const INCIDENCE_JSON: &str = "incidence.json";
pub const INCIDENCE_CSV: &str = "incidence.csv";
pub const COMMONALITY_JSON: &str = "commonality.json";
pub const COMMONALITY_CSV: &str = "commonality.csv";
pub const CHARACTERISTICS_MD: &str = "characteristics.md";
pub const CHARACTERISTICS_CSV: &str = "characteristics.csv";
pub const CHARACTERISTICS_JSON: &str = "characteristics.json";
pub const GENEALOGY_JSON: &str = "genealogy.json";
pub const GENEALOGY_SVG: &str = "genealogy.svg";
pub const REPORT: &str = "report.md";

/// Environment variable holding the embedding provider's bearer token.
pub const TOKEN_ENV: &str = "GENEALOGY_EMBEDDING_TOKEN";

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Wall clock, or `SOURCE_DATE_EPOCH` when set.
pub fn now() -> DateTime<Utc> {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|s| DateTime::from_timestamp(s, 0))
        .unwrap_or_else(Utc::now)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub parameters: serde_json::Value,
    /// Files outside the workspace, by path as given.
    #[serde(default)]
    pub sources: BTreeMap<String, String>,
    /// Workspace artifacts read by the stage.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    /// Stage that produced `artifact`, if any.
    pub fn producer(&self, artifact: &str) -> Option<&str> {
        self.stages
            .iter()
            .find(|(_, r)| r.outputs.contains_key(artifact))
            .map(|(s, _)| s.as_str())
    }
}

/// Exclusive claim on a workspace; released on drop.
#[derive(Debug)]
pub struct WorkspaceLock {
    path: PathBuf,
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn create(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))
    }

    pub fn lock(&self) -> Result<WorkspaceLock> {
        self.create()?;
        let path = self.path(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(WorkspaceLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(self.root.clone())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        let path = self.path(MANIFEST);
        if !path.exists() {
            return Ok(RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                stages: BTreeMap::new(),
            });
        }
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    fn save_manifest(&self, manifest: &RunManifest) -> Result<()> {
        let path = self.path(MANIFEST);
        let tmp = self.path("manifest.json.tmp");
        {
            let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut w = BufWriter::new(file);
            serde_json::to_writer_pretty(&mut w, manifest)?;
            w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
            w.flush().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Path of an artifact another stage must have produced.
    pub fn require(&self, artifact: &str, stage: &str) -> Result<PathBuf> {
        let path = self.path(artifact);
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::StageDependency {
                artifact: path.display().to_string(),
                stage: stage.to_string(),
            })
        }
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))
    }

    fn read_corpus(&self) -> Result<Corpus> {
        let path = self.require(CORPUS, "ingest")?;
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    fn read_exact(&self) -> Result<ExactClasses> {
        ExactClasses::read_jsonl(&self.require(EXACT, "dedup")?)
    }

    fn read_candidates(&self) -> Result<CandidateSet> {
        let path = self.require(CANDIDATES, "candidates")?;
        let params = self.manifest()?.stages.get("candidates").map(|r| r.parameters.clone());
        let k = params
            .as_ref()
            .and_then(|p| p["k"].as_u64())
            .map_or(crate::similarity::DEFAULT_K, |k| k as usize);
        let backend = params
            .and_then(|p| serde_json::from_value::<BackendConfig>(p["backend"].clone()).ok())
            .unwrap_or_default();
        CandidateSet::read_jsonl(&path, k, backend)
    }

    fn read_incidence(&self) -> Result<IncidenceMatrix> {
        IncidenceMatrix::read_json(&self.require(INCIDENCE_JSON, "matrix")?)
    }

    /// Runs `body` and records the stage. `inputs` are workspace artifact
    /// names, `sources` external files.
    fn stage<T>(
        &self,
        name: &str,
        parameters: serde_json::Value,
        inputs: &[&str],
        sources: &[&Path],
        body: impl FnOnce() -> Result<(Vec<String>, T)>,
    ) -> Result<T> {
        let started = now();
        let mut record = StageRecord {
            parameters,
            ..StageRecord::default()
        };
        for src in sources {
            record.sources.insert(src.display().to_string(), sha256_file(src)?);
        }
        for input in inputs {
            let path = self.path(input);
            if path.exists() {
                record.inputs.insert(input.to_string(), sha256_file(&path)?);
            }
        }
        let (outputs, value) = body()?;
        for out in &outputs {
            record.outputs.insert(out.clone(), sha256_file(&self.path(out))?);
        }
        record.started_at = started.to_rfc3339_opts(SecondsFormat::Secs, true);
        record.finished_at = now().to_rfc3339_opts(SecondsFormat::Secs, true);

        let mut manifest = self.manifest()?;
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        manifest.stages.insert(name.to_string(), record);
        self.save_manifest(&manifest)?;
        log::info!("{name}: wrote {}", outputs.join(", "));
        Ok(value)
    }

    /// Every recorded output must still hash as recorded, and every recorded
    /// workspace input must match the file now present.
    pub fn verify(&self) -> Result<RunManifest> {
        let manifest = self.manifest()?;
        let mut problems = Vec::new();
        for (stage, record) in manifest.stages.iter().filter(|(s, _)| s.as_str() != "report") {
            for (artifact, hash) in &record.outputs {
                let path = self.path(artifact);
                if !path.exists() {
                    problems.push(format!("{artifact} (from {stage}) is missing"));
                } else if &sha256_file(&path)? != hash {
                    problems.push(format!("{artifact} changed since {stage} wrote it"));
                }
            }
            for (artifact, hash) in &record.inputs {
                let path = self.path(artifact);
                if path.exists() && &sha256_file(&path)? != hash {
                    problems.push(format!("{stage} is stale: {artifact} changed since it ran"));
                }
            }
        }
        if problems.is_empty() {
            Ok(manifest)
        } else {
            Err(Error::ManifestMismatch(problems.join("; ")))
        }
    }
}

/// Loads, validates and stores the corpus. Errors in the validation report
/// abort the stage after `validation.json` is written.
pub fn ingest(ws: &Workspace, input: &Path, format: Option<CorpusFormat>, incidence_layout: bool) -> Result<ValidationReport> {
    ws.create()?;
    let format_name = if incidence_layout {
        "incidence".to_string()
    } else {
        format!("{:?}", format.or_else(|| CorpusFormat::from_path(input)).unwrap_or(CorpusFormat::Csv)).to_lowercase()
    };
    ws.stage("ingest", json!({ "format": format_name }), &[], &[input], || {
        let corpus = if incidence_layout {
            read_incidence_csv(input)?.to_corpus("published")
        } else {
            let format = format
                .or_else(|| CorpusFormat::from_path(input))
                .ok_or_else(|| Error::Usage(format!("cannot infer format of {}; pass --format", input.display())))?;
            load_corpus(input, format)?
        };
        let report = validate(&corpus);
        let findings: Vec<serde_json::Value> = report
            .findings
            .iter()
            .map(|f| json!({ "severity": format!("{:?}", f.severity()).to_lowercase(), "message": f.to_string() }))
            .collect();
        ws.write_json(VALIDATION, &findings)?;
        for w in report.warnings() {
            log::warn!("{w}");
        }
        if report.has_errors() {
            let msgs: Vec<String> = report.errors().map(|f| f.to_string()).collect();
            return Err(Error::Validation(msgs.join("; ")));
        }
        ws.write_json(CORPUS, &corpus)?;
        Ok((vec![CORPUS.into(), VALIDATION.into()], report))
    })
}

pub fn dedup(ws: &Workspace) -> Result<ExactClasses> {
    let corpus = ws.read_corpus()?;
    ws.stage("dedup", json!({}), &[CORPUS], &[], || {
        let exact = dedup_exact(&corpus)?;
        exact.write_jsonl(&ws.path(EXACT))?;
        Ok((vec![EXACT.into()], exact))
    })
}

/// Top-k candidate pairs. The external backend keeps an embedding cache in
/// the workspace and sends `token` as a bearer token.
pub fn candidates(ws: &Workspace, backend: &BackendConfig, k: usize, token: Option<String>) -> Result<CandidateSet> {
    backend.check()?;
    let exact = ws.read_exact()?;
    ws.stage("candidates", json!({ "k": k, "backend": backend }), &[EXACT], &[], || {
        let texts = exact.texts();
        let scorer = if backend.kind == BackendKind::ExternalEmbedding {
            let cache_path = ws.path(EMBEDDING_CACHE);
            let cache = if cache_path.exists() {
                EmbeddingCache::load(&cache_path)?
            } else {
                EmbeddingCache::default()
            };
            let mut provider = HttpEmbeddingProvider::new(backend.endpoint.clone().unwrap_or_default()).with_cache(cache);
            if let Some(t) = token {
                provider = provider.with_token(t);
            }
            let built = Scorer::build(&texts, backend, Some(&provider));
            // Keep whatever was fetched, even on failure.
            provider.cache().save(&cache_path)?;
            built?
        } else {
            Scorer::build(&texts, backend, None)?
        };
        let set = top_k_with(&scorer, backend, k)?;
        set.write_jsonl(&ws.path(CANDIDATES))?;
        Ok((vec![CANDIDATES.into()], set))
    })
}

pub fn serve_review(ws: &Workspace, addr: SocketAddr) -> Result<()> {
    let corpus = ws.read_corpus()?;
    let exact = ws.read_exact()?;
    let cands = ws.read_candidates()?;
    let state = ReviewState::new(&corpus, &exact, &cands, VerdictLogFile::new(ws.path(VERDICTS)))?;
    eprintln!("review API on http://{addr} (GET /pairs/next?annotator=, POST /verdicts, GET /progress)");
    serve_blocking(addr, state)
}

/// Where imported verdicts come from.
#[derive(Debug, Clone)]
pub enum VerdictSource {
    /// A JSONL verdict file, checked against the candidate set.
    File(PathBuf),
    /// Stand-in for human review: `annotator` judges every candidate scoring
    /// at least `min_score` similar and the rest distinct.
    AutoAccept { annotator: String, min_score: f64 },
}

/// Appends verdicts to the workspace log, skipping those that would not
/// change the annotator's effective decision. Returns the number appended.
pub fn verdicts_import(ws: &Workspace, source: &VerdictSource) -> Result<usize> {
    let cands = ws.read_candidates()?;
    let file = VerdictLogFile::new(ws.path(VERDICTS));
    let (params, sources): (serde_json::Value, Vec<&Path>) = match source {
        VerdictSource::File(p) => (json!({ "file": p.display().to_string() }), vec![p.as_path()]),
        VerdictSource::AutoAccept { annotator, min_score } => {
            (json!({ "auto_accept": { "annotator": annotator, "min_score": min_score } }), vec![])
        }
    };
    ws.stage("verdicts-import", params, &[CANDIDATES], &sources, || {
        let mut log = VerdictLog::for_candidates(&cands).with_entries(file.read()?)?;
        let incoming: Vec<Verdict> = match source {
            VerdictSource::File(p) => VerdictLogFile::new(p).read()?,
            VerdictSource::AutoAccept { annotator, min_score } => auto_verdicts(&cands, annotator, *min_score, now()),
        };
        let mut fresh = Vec::new();
        for v in incoming {
            let current = log.effective().get(&(v.pair_key.as_str(), v.annotator_id.as_str())).copied();
            if current == Some(v.decision) {
                continue;
            }
            log.push(v.clone())?;
            fresh.push(v);
        }
        file.append_all(&fresh)?;
        Ok((vec![], fresh.len()))
    })
}

pub fn equivalence(ws: &Workspace, policy: MergePolicy) -> Result<EquivalenceClasses> {
    let exact = ws.read_exact()?;
    let cands = ws.read_candidates()?;
    let file = VerdictLogFile::new(ws.path(VERDICTS));
    if !file.path().exists() {
        log::warn!("no verdict log in the workspace; final classes equal exact classes");
    }
    ws.stage("equivalence", json!({ "policy": policy }), &[EXACT, CANDIDATES, VERDICTS], &[], || {
        let log = VerdictLog::for_candidates(&cands).with_entries(file.read()?)?;
        let eq = build_equivalence(&exact, &log, policy)?;
        eq.write_json(&ws.path(EQUIVALENCE))?;
        Ok((vec![EQUIVALENCE.into()], eq))
    })
}

pub fn matrix(ws: &Workspace, order: ColumnOrder) -> Result<CommonalityMatrix> {
    let corpus = ws.read_corpus()?;
    let eq = EquivalenceClasses::read_json(&ws.require(EQUIVALENCE, "equivalence")?)?;
    ws.stage("matrix", json!({ "column_order": order.to_string() }), &[CORPUS, EQUIVALENCE], &[], || {
        let inc = build_incidence_with(&corpus, &eq, order)?;
        let cm = commonality(&inc);
        if cm != commonality_from_classes(&corpus, &eq, &inc.items)? {
            return Err(Error::Numeric("commonality from incidence disagrees with class sets".into()));
        }
        inc.write_json(&ws.path(INCIDENCE_JSON))?;
        inc.export_csv(&ws.path(INCIDENCE_CSV))?;
        cm.write_json(&ws.path(COMMONALITY_JSON))?;
        cm.export_csv(&ws.path(COMMONALITY_CSV))?;
        Ok((
            vec![INCIDENCE_JSON.into(), INCIDENCE_CSV.into(), COMMONALITY_JSON.into(), COMMONALITY_CSV.into()],
            cm,
        ))
    })
}

/// File-name tag for a clustering run, e.g. `items-ward` or `specs8-complete`.
pub fn cluster_tag(axis: Axis, linkage: Linkage) -> String {
    match axis {
        Axis::Items => format!("items-{linkage}"),
        Axis::Specs { min_items } => format!("specs{min_items}-{linkage}"),
    }
}

pub fn dendrogram_file(tag: &str) -> String {
    format!("dendrogram-{tag}.json")
}

pub fn groups_file(tag: &str) -> String {
    format!("groups-{tag}.csv")
}

/// Builds and stores a dendrogram; with `cut_k` also a groups CSV
/// (`item_id,group_id` or `class_id,group_id`).
pub fn cluster(ws: &Workspace, axis: Axis, linkage: Linkage, metric: Option<Metric>, cut_k: Option<usize>) -> Result<Dendrogram> {
    let inc = ws.read_incidence()?;
    let metric = metric.unwrap_or_else(|| Metric::default_for(linkage));
    let tag = cluster_tag(axis, linkage);
    let min_items = match axis {
        Axis::Items => None,
        Axis::Specs { min_items } => Some(min_items),
    };
    let params = json!({
        "axis": if min_items.is_some() { "specs" } else { "items" },
        "min_items": min_items,
        "linkage": linkage.to_string(),
        "metric": metric.to_string(),
        "cut": cut_k,
    });
    ws.stage(&format!("cluster-{tag}"), params, &[INCIDENCE_JSON], &[], || {
        let dm = distance_matrix(&inc, axis, metric)?;
        let dend = agglomerate(&dm, linkage)?;
        let json_name = dendrogram_file(&tag);
        let nwk_name = format!("dendrogram-{tag}.nwk");
        let svg_name = format!("dendrogram-{tag}.svg");
        dend.write_json(&ws.path(&json_name))?;
        ws.write_text(&nwk_name, &format!("{}\n", dend.to_newick()))?;
        ws.write_text(&svg_name, &render_dendrogram(&dend))?;
        let mut outputs = vec![json_name, nwk_name, svg_name];
        if let Some(k) = cut_k {
            let partition = cut(&dend, k)?;
            let name = groups_file(&tag);
            let path = ws.path(&name);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = csv::Writer::from_writer(BufWriter::new(file));
            w.write_record([if min_items.is_some() { "class_id" } else { "item_id" }, "group_id"])?;
            for (leaf, g) in partition.assignment.iter().enumerate() {
                w.write_record([dm.ids[leaf].clone(), format!("cluster-{}", g + 1)])?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            outputs.push(name);
        }
        Ok((outputs, dend))
    })
}

/// Where characterize takes its item groups from.
#[derive(Debug, Clone)]
pub enum GroupSource {
    /// `item_id,group_id` CSV; a bare file name is looked up in the
    /// workspace first.
    File(PathBuf),
    /// The corpus's `group_label` column.
    Labels,
}

pub fn characterize(
    ws: &Workspace,
    groups: &GroupSource,
    threshold: f64,
    categories: Option<&Path>,
) -> Result<Vec<characterize::GroupSpecTable>> {
    let inc = ws.read_incidence()?;
    let cats = categories.map(characterize::read_categories_csv).transpose()?;
    let mut inputs = vec![INCIDENCE_JSON.to_string()];
    let mut sources: Vec<&Path> = categories.into_iter().collect();
    let (group_list, group_param): (Vec<Group>, String) = match groups {
        GroupSource::Labels => (characterize::groups_from_labels(&inc.items), "labels".into()),
        GroupSource::File(p) => {
            let in_ws = ws.root().join(p);
            let path = if p.is_relative() && in_ws.exists() {
                inputs.push(p.display().to_string());
                in_ws
            } else {
                sources.push(p.as_path());
                p.clone()
            };
            (characterize::read_groups_csv(&path)?, p.display().to_string())
        }
    };
    if group_list.is_empty() {
        return Err(Error::InsufficientData("no groups to characterize".into()));
    }
    let input_refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
    let params = json!({
        "groups": group_param,
        "threshold": threshold,
        "categories": categories.map(|c| c.display().to_string()),
    });
    ws.stage("characterize", params, &input_refs, &sources, || {
        let (tables, _warnings) = characterize::group_spec_table(&group_list, &inc, threshold, cats.as_ref())?;
        ws.write_text(CHARACTERISTICS_MD, &characterize::to_markdown(&tables))?;
        characterize::write_csv(&tables, &ws.path(CHARACTERISTICS_CSV))?;
        ws.write_json(CHARACTERISTICS_JSON, &tables)?;
        Ok((
            vec![CHARACTERISTICS_MD.into(), CHARACTERISTICS_CSV.into(), CHARACTERISTICS_JSON.into()],
            tables,
        ))
    })
}

#[derive(Debug, Clone, Default)]
pub struct RenderOptions {
    pub min_edge: usize,
    pub weight: NodeWeight,
    /// One item id per line; overrides release dates.
    pub order_file: Option<PathBuf>,
    /// Items to draw profiles for; empty means all.
    pub profiles: Vec<String>,
}

pub fn profile_file(position: usize, ext: &str) -> String {
    format!("profile-{position:03}.{ext}")
}

pub fn render(ws: &Workspace, opts: &RenderOptions) -> Result<Vec<String>> {
    let cm = CommonalityMatrix::read_json(&ws.require(COMMONALITY_JSON, "matrix")?)?;
    let order: Option<Vec<String>> = match &opts.order_file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
        }
        None => None,
    };
    let profile_ids: Vec<String> = if opts.profiles.is_empty() {
        cm.items.iter().map(|i| i.item_id.clone()).collect()
    } else {
        opts.profiles.clone()
    };
    let sources: Vec<&Path> = opts.order_file.iter().map(PathBuf::as_path).collect();
    let params = json!({
        "min_edge": opts.min_edge,
        "weight": opts.weight.to_string(),
        "order_file": opts.order_file.as_ref().map(|p| p.display().to_string()),
        "profiles": profile_ids,
    });
    ws.stage("render", params, &[COMMONALITY_JSON], &sources, || {
        let g = render_genealogy(&cm, order.as_deref(), opts.min_edge, opts.weight)?;
        ws.write_json(GENEALOGY_JSON, &g.data)?;
        ws.write_text(GENEALOGY_SVG, &g.svg)?;
        let mut outputs = vec![GENEALOGY_JSON.to_string(), GENEALOGY_SVG.to_string()];
        for id in &profile_ids {
            let p = render_profile(id, &cm)?;
            let pos = cm.position(id).expect("profile item exists");
            let (j, s) = (profile_file(pos, "json"), profile_file(pos, "svg"));
            ws.write_json(&j, &p.data)?;
            ws.write_text(&s, &p.svg)?;
            outputs.push(j);
            outputs.push(s);
        }
        Ok((outputs, g.warnings))
    })
}

fn md_cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

/// Verifies the manifest and bundles every table and figure into
/// `report.md`.
pub fn report(ws: &Workspace) -> Result<PathBuf> {
    let manifest = ws.verify()?;
    let corpus = ws.read_corpus()?;
    let cm = CommonalityMatrix::read_json(&ws.require(COMMONALITY_JSON, "matrix")?)?;
    let inputs: Vec<String> = manifest
        .stages
        .iter()
        .filter(|(s, _)| s.as_str() != "report")
        .flat_map(|(_, r)| r.outputs.keys().cloned())
        .collect();
    let input_refs: Vec<&str> = inputs.iter().map(String::as_str).collect();

    ws.stage("report", json!({}), &input_refs, &[], || {
        let mut out = String::new();
        let _ = writeln!(out, "# Genealogy report\n");

        let annotators: std::collections::BTreeSet<&str> = corpus.records.iter().map(|r| r.annotator_id.as_str()).collect();
        let _ = writeln!(out, "## Corpus\n");
        let _ = writeln!(
            out,
            "{} items, {} spec records, {} annotators.\n",
            corpus.items.len(),
            corpus.records.len(),
            annotators.len()
        );
        let findings = validate(&corpus);
        for f in &findings.findings {
            let _ = writeln!(out, "- {f}");
        }
        if !findings.is_empty() {
            out.push('\n');
        }

        if let Ok(exact) = ws.read_exact() {
            let _ = writeln!(out, "## Exact classes\n\n{} distinct canonical texts.\n", exact.len());
        }
        if let Ok(cands) = ws.read_candidates() {
            let _ = writeln!(
                out,
                "## Candidates\n\n{} rows ({} distinct pairs), k = {}, backend {}.\n",
                cands.pairs.len(),
                cands.pair_keys().len(),
                cands.k,
                cands.backend.kind
            );
            let file = VerdictLogFile::new(ws.path(VERDICTS));
            if let Ok(log) = VerdictLog::for_candidates(&cands).with_entries(file.read()?) {
                let names: Vec<&str> = log.annotators().into_iter().collect();
                let _ = writeln!(out, "## Adjudication\n\n{} verdicts from {} annotators.\n", log.entries().len(), names.len());
                let mut rows = Vec::new();
                for (i, a) in names.iter().enumerate() {
                    for b in &names[i + 1..] {
                        if let Ok(ag) = agreement(&log, a, b) {
                            rows.push(format!(
                                "| {} | {} | {} | {:.1}% | {:.3} |",
                                md_cell(a),
                                md_cell(b),
                                ag.n,
                                ag.percent * 100.0,
                                ag.kappa
                            ));
                        }
                    }
                }
                if !rows.is_empty() {
                    out.push_str("| a | b | pairs | agreement | kappa |\n|---|---|---:|---:|---:|\n");
                    for r in rows {
                        let _ = writeln!(out, "{r}");
                    }
                    out.push('\n');
                }
            }
        }
        if let Ok(path) = ws.require(EQUIVALENCE, "equivalence") {
            let eq = EquivalenceClasses::read_json(&path)?;
            let policy = manifest
                .stages
                .get("equivalence")
                .and_then(|r| r.parameters["policy"].as_str().map(String::from))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "## Final classes\n\n{} final classes from {} exact classes (policy {policy}).\n",
                eq.len(),
                eq.exact_to_final.len()
            );
        }

        let _ = writeln!(out, "## Commonality\n");
        out.push_str("| |");
        for i in 0..cm.len() {
            let _ = write!(out, " {} |", i + 1);
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(cm.len()));
        out.push('\n');
        for (i, item) in cm.items.iter().enumerate() {
            let _ = write!(out, "| {}. {} |", i + 1, md_cell(&item.title));
            for j in 0..cm.len() {
                let _ = write!(out, " {} |", cm.get(i, j));
            }
            out.push('\n');
        }
        let _ = writeln!(out, "\nFull matrix: [{COMMONALITY_CSV}]({COMMONALITY_CSV}); incidence: [{INCIDENCE_CSV}]({INCIDENCE_CSV}).\n");

        let dendrograms: Vec<&str> = inputs.iter().filter(|n| n.starts_with("dendrogram-") && n.ends_with(".json")).map(String::as_str).collect();
        if !dendrograms.is_empty() {
            let _ = writeln!(out, "## Clustering\n");
            for name in dendrograms {
                let stem = name.trim_end_matches(".json");
                let nwk = fs::read_to_string(ws.path(&format!("{stem}.nwk"))).unwrap_or_default();
                let _ = writeln!(out, "### {stem}\n\n![{stem}]({stem}.svg)\n\n```\n{}\n```\n", nwk.trim());
            }
        }
        if let Ok(md) = fs::read_to_string(ws.path(CHARACTERISTICS_MD)) {
            let _ = writeln!(out, "## Characteristic specs\n\n{md}");
        }
        if ws.path(GENEALOGY_SVG).exists() {
            let _ = writeln!(out, "## Genealogy\n\n![genealogy]({GENEALOGY_SVG})\n");
        }

        let _ = writeln!(out, "## Artifacts\n\n| artifact | stage | sha256 |\n|---|---|---|");
        for (stage, r) in manifest.stages.iter().filter(|(s, _)| s.as_str() != "report") {
            for (artifact, hash) in &r.outputs {
                let _ = writeln!(out, "| {artifact} | {stage} | `{hash}` |");
            }
        }
        ws.write_text(REPORT, &out)?;
        Ok((vec![REPORT.into()], ws.path(REPORT)))
    })
}
