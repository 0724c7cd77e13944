//! Human verdicts on candidate pairs and the final equivalence classes.
//!
//! A verdict log is append-only. The effective decision of an annotator on a
//! pair is the last one they appended. `unsure` is recorded but never adds or
//! blocks an edge.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::ExactClasses;
use crate::similarity::{parse_pair_key, CandidateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Similar,
    Distinct,
    Unsure,
}

impl FromStr for Decision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similar" => Ok(Decision::Similar),
            "distinct" => Ok(Decision::Distinct),
            "unsure" => Ok(Decision::Unsure),
            other => Err(Error::Usage(format!("unknown decision {other:?}"))),
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Similar => "similar",
            Decision::Distinct => "distinct",
            Decision::Unsure => "unsure",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub pair_key: String,
    pub decision: Decision,
    pub annotator_id: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Default)]
pub struct VerdictLog {
    entries: Vec<Verdict>,
    known_pairs: HashSet<String>,
}

impl VerdictLog {
    /// An empty log accepting verdicts on the given pair keys.
    pub fn new<I, S>(pair_keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        VerdictLog {
            entries: Vec::new(),
            known_pairs: pair_keys.into_iter().map(Into::into).collect(),
        }
    }

    pub fn for_candidates(candidates: &CandidateSet) -> Self {
        Self::new(candidates.pair_keys())
    }

    /// Replays `entries` in order; fails on the first unknown pair key.
    pub fn with_entries(mut self, entries: impl IntoIterator<Item = Verdict>) -> Result<Self> {
        for v in entries {
            self.push(v)?;
        }
        Ok(self)
    }

    pub fn push(&mut self, verdict: Verdict) -> Result<&Verdict> {
        if !self.known_pairs.contains(&verdict.pair_key) {
            return Err(Error::Reference(format!("pair {:?} is not a candidate pair", verdict.pair_key)));
        }
        self.entries.push(verdict);
        Ok(self.entries.last().unwrap())
    }

    pub fn record_verdict(
        &mut self,
        pair_key: &str,
        decision: Decision,
        annotator_id: &str,
        timestamp: DateTime<Utc>,
    ) -> Result<&Verdict> {
        self.push(Verdict {
            pair_key: pair_key.to_string(),
            decision,
            annotator_id: annotator_id.to_string(),
            timestamp,
        })
    }

    pub fn entries(&self) -> &[Verdict] {
        &self.entries
    }

    pub fn is_known(&self, pair_key: &str) -> bool {
        self.known_pairs.contains(pair_key)
    }

    pub fn known_pairs(&self) -> usize {
        self.known_pairs.len()
    }

    pub fn annotators(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|v| v.annotator_id.as_str()).collect()
    }

    /// Last decision per (pair, annotator).
    pub fn effective(&self) -> BTreeMap<(&str, &str), Decision> {
        let mut m = BTreeMap::new();
        for v in &self.entries {
            m.insert((v.pair_key.as_str(), v.annotator_id.as_str()), v.decision);
        }
        m
    }

    /// Effective decisions of one annotator, keyed by pair.
    pub fn effective_for(&self, annotator_id: &str) -> BTreeMap<&str, Decision> {
        let mut m = BTreeMap::new();
        for v in self.entries.iter().filter(|v| v.annotator_id == annotator_id) {
            m.insert(v.pair_key.as_str(), v.decision);
        }
        m
    }

    /// Entries that are still effective, in the order they were appended.
    pub fn compacted(&self) -> Vec<Verdict> {
        let mut last: HashMap<(&str, &str), usize> = HashMap::new();
        for (i, v) in self.entries.iter().enumerate() {
            last.insert((v.pair_key.as_str(), v.annotator_id.as_str()), i);
        }
        let mut keep: Vec<usize> = last.into_values().collect();
        keep.sort_unstable();
        keep.into_iter().map(|i| self.entries[i].clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Agreement {
    pub percent: f64,
    pub kappa: f64,
    pub n: usize,
}

/// Percent agreement and Cohen's kappa over pairs both annotators judged
/// similar or distinct.
///
/// When both annotators used a single identical label throughout, chance
/// agreement is 1 and kappa is reported as 1.
pub fn agreement(log: &VerdictLog, annotator_a: &str, annotator_b: &str) -> Result<Agreement> {
    let a = log.effective_for(annotator_a);
    let b = log.effective_for(annotator_b);
    let mut n = 0usize;
    let mut matches = 0usize;
    let mut a_similar = 0usize;
    let mut b_similar = 0usize;
    for (pair, da) in &a {
        let Some(db) = b.get(pair) else { continue };
        if *da == Decision::Unsure || *db == Decision::Unsure {
            continue;
        }
        n += 1;
        matches += usize::from(da == db);
        a_similar += usize::from(*da == Decision::Similar);
        b_similar += usize::from(*db == Decision::Similar);
    }
    if n == 0 {
        return Err(Error::InsufficientData(format!(
            "{annotator_a:?} and {annotator_b:?} share no pair judged similar or distinct"
        )));
    }
    let nf = n as f64;
    let observed = matches as f64 / nf;
    let (pa, pb) = (a_similar as f64 / nf, b_similar as f64 / nf);
    let expected = pa * pb + (1.0 - pa) * (1.0 - pb);
    let kappa = if (1.0 - expected).abs() < 1e-15 {
        1.0
    } else {
        (observed - expected) / (1.0 - expected)
    };
    Ok(Agreement {
        percent: observed,
        kappa,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergePolicy {
    /// At least one annotator said similar and none said distinct.
    #[default]
    AnySimilar,
    /// Every annotator present in the log judged the pair, none said distinct,
    /// and at least one said similar.
    AllSimilar,
}

impl FromStr for MergePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any-similar" | "any_similar" => Ok(MergePolicy::AnySimilar),
            "all-similar" | "all_similar" => Ok(MergePolicy::AllSimilar),
            other => Err(Error::Usage(format!("unknown policy {other:?}"))),
        }
    }
}

impl fmt::Display for MergePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergePolicy::AnySimilar => "any-similar",
            MergePolicy::AllSimilar => "all-similar",
        })
    }
}

/// Disjoint sets over `0..n` with union by size and path halving.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    /// Component label per element, numbered by smallest member.
    pub fn labels(&mut self) -> Vec<usize> {
        let n = self.parent.len();
        let mut label_of_root = vec![usize::MAX; n];
        let mut next = 0;
        (0..n)
            .map(|x| {
                let r = self.find(x);
                if label_of_root[r] == usize::MAX {
                    label_of_root[r] = next;
                    next += 1;
                }
                label_of_root[r]
            })
            .collect()
    }
}

/// Final "same mechanic" classes over records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceClasses {
    /// Final class of each exact class.
    pub exact_to_final: Vec<usize>,
    /// Record ids per final class, ordered by exact class then record order.
    pub members: Vec<Vec<String>>,
    #[serde(skip)]
    class_of: HashMap<String, usize>,
}

impl EquivalenceClasses {
    fn from_labels(exact: &ExactClasses, exact_to_final: Vec<usize>) -> Self {
        let count = exact_to_final.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); count];
        for (pos, class) in exact.classes.iter().enumerate() {
            members[exact_to_final[pos]].extend(class.source_record_ids.iter().cloned());
        }
        let mut eq = EquivalenceClasses {
            exact_to_final,
            members,
            class_of: HashMap::new(),
        };
        eq.reindex();
        eq
    }

    /// Every exact class is its own final class.
    pub fn from_exact(exact: &ExactClasses) -> Self {
        Self::from_labels(exact, (0..exact.len()).collect())
    }

    fn reindex(&mut self) {
        self.class_of = self
            .members
            .iter()
            .enumerate()
            .flat_map(|(c, ids)| ids.iter().map(move |r| (r.clone(), c)))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn class_of(&self, record_id: &str) -> Option<usize> {
        self.class_of.get(record_id).copied()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut eq: Self = serde_json::from_reader(BufReader::new(file))?;
        eq.reindex();
        Ok(eq)
    }
}

fn accepted(policy: MergePolicy, decisions: &[Decision], annotators: usize) -> bool {
    let similar = decisions.contains(&Decision::Similar);
    let distinct = decisions.contains(&Decision::Distinct);
    match policy {
        MergePolicy::AnySimilar => similar && !distinct,
        MergePolicy::AllSimilar => similar && !distinct && decisions.len() == annotators,
    }
}

/// Pairs of exact classes whose effective verdicts satisfy `policy`.
pub fn accepted_edges(exact: &ExactClasses, log: &VerdictLog, policy: MergePolicy) -> Result<Vec<(usize, usize)>> {
    let annotators = log.annotators().len();
    let mut by_pair: BTreeMap<&str, Vec<Decision>> = BTreeMap::new();
    for ((pair, _), d) in log.effective() {
        by_pair.entry(pair).or_default().push(d);
    }
    let mut edges = Vec::new();
    for (pair, decisions) in by_pair {
        let (a, b) = parse_pair_key(pair)
            .filter(|&(_, b)| b < exact.len())
            .ok_or_else(|| Error::Reference(format!("pair {pair:?} does not address two exact classes")))?;
        if accepted(policy, &decisions, annotators) {
            edges.push((a, b));
        }
    }
    Ok(edges)
}

/// Connected components of exact classes under accepted similarity edges.
pub fn build_equivalence(exact: &ExactClasses, log: &VerdictLog, policy: MergePolicy) -> Result<EquivalenceClasses> {
    let mut uf = UnionFind::new(exact.len());
    for (a, b) in accepted_edges(exact, log, policy)? {
        uf.union(a, b);
    }
    Ok(EquivalenceClasses::from_labels(exact, uf.labels()))
}

/// Stand-in for human review: similar at or above `min_score`, else distinct.
pub fn auto_verdicts(candidates: &CandidateSet, annotator_id: &str, min_score: f64, timestamp: DateTime<Utc>) -> Vec<Verdict> {
    let by_key = candidates.by_key();
    candidates
        .pair_keys()
        .into_iter()
        .map(|key| Verdict {
            pair_key: key.to_string(),
            decision: if by_key[key].score >= min_score {
                Decision::Similar
            } else {
                Decision::Distinct
            },
            annotator_id: annotator_id.to_string(),
            timestamp,
        })
        .collect()
}

/// The JSONL file behind a verdict log.
#[derive(Debug, Clone)]
pub struct VerdictLogFile {
    path: PathBuf,
}

impl VerdictLogFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        VerdictLogFile { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// All entries on disk; a missing file reads as empty.
    pub fn read(&self) -> Result<Vec<Verdict>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let file = File::open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&self.path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| Error::Input {
                path: self.path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(out)
    }

    /// Appends and syncs one entry.
    pub fn append(&self, verdict: &Verdict) -> Result<()> {
        self.append_all(std::slice::from_ref(verdict))
    }

    pub fn append_all(&self, verdicts: &[Verdict]) -> Result<()> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let mut buf = Vec::new();
        for v in verdicts {
            serde_json::to_writer(&mut buf, v)?;
            buf.push(b'\n');
        }
        file.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        file.sync_data().map_err(|e| Error::io(&self.path, e))
    }

    /// Rewrites the file with only effective entries, via a temporary file
    /// and rename.
    pub fn compact(&self, log: &VerdictLog) -> Result<()> {
        let tmp = self.path.with_extension("jsonl.tmp");
        {
            let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut w = BufWriter::new(file);
            for v in log.compacted() {
                serde_json::to_writer(&mut w, &v)?;
                w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
            }
            let file = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
            file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, &self.path).map_err(|e| Error::io(&self.path, e))
    }
}

/// Two sentences with different wording and counts that still describe one
/// mechanic. Reviewers should judge pairs like this `similar`.
pub const SAME_MECHANIC_EXAMPLE: (&str, &str) = (
    "メイン画面では 7 つのコマンドが選べる",
    "メニューでは 6 つのコマンドが選択できる",
);

/// Pairs on which reviewers are known to disagree.
pub const CONTESTED_EXAMPLES: [(&str, &str); 2] = [
    ("コマンドが 9 つ選択できる", "コマンドが 2 つ選択できる"),
    ("バトル評価に応じて報酬が変化する", "バトルの順位に応じて報酬を獲得できる"),
];
