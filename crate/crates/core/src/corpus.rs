//! Items, their spec sentences, and the loaders that read them.
//!
//! A corpus file holds one spec sentence per row. Item metadata (title,
//! release date) is repeated on every row of that item; a row whose title is
//! blank only references an item that must be described by some other row.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecRecord {
    pub record_id: String,
    pub item_id: String,
    pub raw_text: String,
    pub annotator_id: String,
    /// 1-based position within (item, annotator).
    pub seq: u32,
}

/// Record id used when the input carries none.
pub fn derived_record_id(item_id: &str, annotator_id: &str, seq: u32) -> String {
    format!("{item_id}/{annotator_id}/{seq}")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub items: Vec<Item>,
    pub records: Vec<SpecRecord>,
}

impl Corpus {
    /// Assembles a corpus from already-built parts. No validation is done;
    /// call [`validate`] for a report.
    pub fn new(items: Vec<Item>, records: Vec<SpecRecord>) -> Self {
        Corpus { items, records }
    }

    pub fn item(&self, item_id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn item_position(&self, item_id: &str) -> Option<usize> {
        self.items.iter().position(|i| i.item_id == item_id)
    }

    /// Map from item id to its position in `items`.
    pub fn item_positions(&self) -> HashMap<&str, usize> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, item)| (item.item_id.as_str(), i))
            .collect()
    }

    pub fn records_of<'a>(&'a self, item_id: &'a str) -> impl Iterator<Item = &'a SpecRecord> + 'a {
        self.records.iter().filter(move |r| r.item_id == item_id)
    }

    /// Writes the corpus in the CSV layout accepted by [`load_corpus`].
    ///
    /// A `record_id` column is added only if some record id differs from the
    /// derived form, and a `group_label` column only if some item has one.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let with_ids = self
            .records
            .iter()
            .any(|r| r.record_id != derived_record_id(&r.item_id, &r.annotator_id, r.seq));
        let with_groups = self.items.iter().any(|i| i.group_label.is_some());
        let mut header = vec!["item_id", "title", "release_date", "annotator_id", "spec_text"];
        if with_ids {
            header.push("record_id");
        }
        if with_groups {
            header.push("group_label");
        }
        w.write_record(&header)?;
        let items = self.item_positions();
        for r in &self.records {
            let item = items.get(r.item_id.as_str()).map(|&i| &self.items[i]);
            let date = item
                .and_then(|i| i.release_date)
                .map(|d| d.to_string())
                .unwrap_or_default();
            let mut row = vec![
                r.item_id.clone(),
                item.map(|i| i.title.clone()).unwrap_or_default(),
                date,
                r.annotator_id.clone(),
                r.raw_text.clone(),
            ];
            if with_ids {
                row.push(r.record_id.clone());
            }
            if with_groups {
                row.push(item.and_then(|i| i.group_label.clone()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Writes one JSON object per record, in the layout accepted by
    /// [`load_corpus`] with [`CorpusFormat::Jsonl`].
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let items = self.item_positions();
        for r in &self.records {
            let item = items.get(r.item_id.as_str()).map(|&i| &self.items[i]);
            let row = RawRow {
                item_id: r.item_id.clone(),
                title: item.map(|i| i.title.clone()).unwrap_or_default(),
                release_date: item.and_then(|i| i.release_date).map(|d| d.to_string()),
                annotator_id: r.annotator_id.clone(),
                spec_text: r.raw_text.clone(),
                record_id: Some(r.record_id.clone()),
                group_label: item.and_then(|i| i.group_label.clone()),
            };
            serde_json::to_writer(&mut w, &row)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(CorpusFormat::Csv),
            "jsonl" | "ndjson" => Some(CorpusFormat::Jsonl),
            _ => None,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(CorpusFormat::Csv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::Usage(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawRow {
    item_id: String,
    #[serde(default)]
    title: String,
    #[serde(default, deserialize_with = "empty_as_none", skip_serializing_if = "Option::is_none")]
    release_date: Option<String>,
    annotator_id: String,
    spec_text: String,
    #[serde(default, deserialize_with = "empty_as_none", skip_serializing_if = "Option::is_none")]
    record_id: Option<String>,
    #[serde(default, deserialize_with = "empty_as_none", skip_serializing_if = "Option::is_none")]
    group_label: Option<String>,
}

fn empty_as_none<'de, D>(de: D) -> std::result::Result<Option<String>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let value: Option<String> = Option::deserialize(de)?;
    Ok(value.filter(|s| !s.trim().is_empty()))
}

/// Reads a corpus file. Records keep file order; `seq` counts per
/// (item, annotator) in encounter order.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<(usize, RawRow)> = match format {
        CorpusFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_reader(BufReader::new(file));
            let mut rows = Vec::new();
            for result in reader.deserialize::<RawRow>() {
                let row = result.map_err(|e| {
                    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                    Error::Input {
                        path: display.clone(),
                        line,
                        message: e.to_string(),
                    }
                })?;
                rows.push(row);
            }
            // Header is line 1.
            rows.into_iter().enumerate().map(|(i, r)| (i + 2, r)).collect()
        }
        CorpusFormat::Jsonl => {
            let mut rows = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let row: RawRow = serde_json::from_str(&line).map_err(|e| Error::Input {
                    path: display.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                rows.push((i + 1, row));
            }
            rows
        }
    };
    assemble(&display, rows)
}

fn assemble(path: &str, rows: Vec<(usize, RawRow)>) -> Result<Corpus> {
    let mut items: Vec<Item> = Vec::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();
    let mut referenced: Vec<(usize, String)> = Vec::new();
    let mut seqs: HashMap<(String, String), u32> = HashMap::new();
    let mut records = Vec::with_capacity(rows.len());

    for (line, row) in rows {
        let input_err = |message: String| Error::Input {
            path: path.to_string(),
            line,
            message,
        };
        if row.item_id.trim().is_empty() {
            return Err(input_err("empty item_id".into()));
        }
        let release_date = row
            .release_date
            .as_deref()
            .map(|d| NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d"))
            .transpose()
            .map_err(|e| input_err(format!("bad release_date: {e}")))?;

        if row.title.trim().is_empty() {
            referenced.push((line, row.item_id.clone()));
        } else {
            match item_index.get(&row.item_id) {
                Some(&i) => {
                    let item = &mut items[i];
                    if item.title != row.title {
                        return Err(input_err(format!(
                            "item {:?} has conflicting titles {:?} and {:?}",
                            row.item_id, item.title, row.title
                        )));
                    }
                    if release_date.is_some() && item.release_date.is_some() && item.release_date != release_date {
                        return Err(input_err(format!(
                            "item {:?} has conflicting release dates",
                            row.item_id
                        )));
                    }
                    item.release_date = item.release_date.or(release_date);
                    if item.group_label.is_none() {
                        item.group_label = row.group_label.clone();
                    }
                }
                None => {
                    item_index.insert(row.item_id.clone(), items.len());
                    items.push(Item {
                        item_id: row.item_id.clone(),
                        title: row.title.clone(),
                        release_date,
                        group_label: row.group_label.clone(),
                    });
                }
            }
        }

        if row.spec_text.trim().is_empty() {
            return Err(Error::Validation(format!(
                "{path}: line {line}: empty spec_text for item {:?}",
                row.item_id
            )));
        }
        let seq = seqs
            .entry((row.item_id.clone(), row.annotator_id.clone()))
            .and_modify(|s| *s += 1)
            .or_insert(1);
        let record_id = row
            .record_id
            .unwrap_or_else(|| derived_record_id(&row.item_id, &row.annotator_id, *seq));
        records.push(SpecRecord {
            record_id,
            item_id: row.item_id,
            raw_text: row.spec_text,
            annotator_id: row.annotator_id,
            seq: *seq,
        });
    }

    for (line, item_id) in referenced {
        if !item_index.contains_key(&item_id) {
            return Err(Error::Validation(format!(
                "{path}: line {line}: record references unknown item {item_id:?}"
            )));
        }
    }

    Ok(Corpus { items, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Finding {
    DuplicateItemId { item_id: String },
    DuplicateRecordId { record_id: String },
    EmptyTitle { item_id: String },
    DanglingItem { record_id: String, item_id: String },
    EmptyText { record_id: String },
    ItemWithoutRecords { item_id: String },
    /// Every item should be coded by at least two people.
    SingleAnnotator { item_id: String, annotator_id: String },
}

impl Finding {
    pub fn severity(&self) -> Severity {
        match self {
            Finding::SingleAnnotator { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::DuplicateItemId { item_id } => write!(f, "duplicate item id {item_id:?}"),
            Finding::DuplicateRecordId { record_id } => write!(f, "duplicate record id {record_id:?}"),
            Finding::EmptyTitle { item_id } => write!(f, "item {item_id:?} has an empty title"),
            Finding::DanglingItem { record_id, item_id } => {
                write!(f, "record {record_id:?} references unknown item {item_id:?}")
            }
            Finding::EmptyText { record_id } => write!(f, "record {record_id:?} has empty text"),
            Finding::ItemWithoutRecords { item_id } => write!(f, "item {item_id:?} has no records"),
            Finding::SingleAnnotator { item_id, annotator_id } => write!(
                f,
                "item {item_id:?} was coded by a single annotator ({annotator_id:?}); at least two coders are required"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity() == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity() == Severity::Warning)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity() == Severity::Error)
    }
}

/// Checks every corpus invariant and reports what is violated. Never fails.
pub fn validate(corpus: &Corpus) -> ValidationReport {
    let mut findings = Vec::new();

    let mut seen_items = HashSet::new();
    for item in &corpus.items {
        if !seen_items.insert(item.item_id.as_str()) {
            findings.push(Finding::DuplicateItemId {
                item_id: item.item_id.clone(),
            });
        }
        if item.title.trim().is_empty() {
            findings.push(Finding::EmptyTitle {
                item_id: item.item_id.clone(),
            });
        }
    }

    let mut seen_records = HashSet::new();
    let mut annotators: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in &corpus.records {
        if !seen_records.insert(r.record_id.as_str()) {
            findings.push(Finding::DuplicateRecordId {
                record_id: r.record_id.clone(),
            });
        }
        if !seen_items.contains(r.item_id.as_str()) {
            findings.push(Finding::DanglingItem {
                record_id: r.record_id.clone(),
                item_id: r.item_id.clone(),
            });
        }
        if r.raw_text.trim().is_empty() {
            findings.push(Finding::EmptyText {
                record_id: r.record_id.clone(),
            });
        }
        let list = annotators.entry(r.item_id.as_str()).or_default();
        if !list.contains(&r.annotator_id.as_str()) {
            list.push(r.annotator_id.as_str());
        }
    }

    for item in &corpus.items {
        match annotators.get(item.item_id.as_str()) {
            None => findings.push(Finding::ItemWithoutRecords {
                item_id: item.item_id.clone(),
            }),
            Some(list) if list.len() == 1 => findings.push(Finding::SingleAnnotator {
                item_id: item.item_id.clone(),
                annotator_id: list[0].to_string(),
            }),
            Some(_) => {}
        }
    }

    ValidationReport { findings }
}
