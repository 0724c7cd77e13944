//! Canonical text and exact-duplicate classes.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// NFKC, trim, collapse whitespace runs to one ASCII space, ASCII lowercase.
///
/// Punctuation is kept as is.
pub fn normalize_text(raw: &str) -> Result<String> {
    canonical(raw).ok_or_else(|| Error::EmptyText {
        location: format!("{raw:?}"),
    })
}

fn canonical(raw: &str) -> Option<String> {
    let nfkc: String = raw.nfkc().collect();
    let mut out = String::with_capacity(nfkc.len());
    for word in nfkc.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().map(|c| c.to_ascii_lowercase()));
    }
    (!out.is_empty()).then_some(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedText {
    #[serde(rename = "canonical_text")]
    pub value: String,
    #[serde(rename = "record_ids")]
    pub source_record_ids: Vec<String>,
}

/// Records grouped by identical canonical text, ordered by first occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactClasses {
    pub classes: Vec<NormalizedText>,
    pub index: HashMap<String, usize>,
}

impl ExactClasses {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_of(&self, record_id: &str) -> Option<usize> {
        self.index.get(record_id).copied()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.value.as_str()).collect()
    }

    pub fn from_classes(classes: Vec<NormalizedText>) -> Self {
        let index = classes
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.source_record_ids.iter().map(move |r| (r.clone(), i)))
            .collect();
        ExactClasses { classes, index }
    }

    /// One JSON object per class: `{canonical_text, record_ids}`.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for c in &self.classes {
            serde_json::to_writer(&mut w, c)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut classes = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            classes.push(serde_json::from_str(&line).map_err(|e| Error::Input {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self::from_classes(classes))
    }
}

/// Collapses records whose canonical texts are string-identical.
pub fn dedup_exact(corpus: &Corpus) -> Result<ExactClasses> {
    let mut by_text: HashMap<String, usize> = HashMap::new();
    let mut classes: Vec<NormalizedText> = Vec::new();
    let mut index = HashMap::with_capacity(corpus.records.len());
    for r in &corpus.records {
        let value = canonical(&r.raw_text).ok_or_else(|| Error::EmptyText {
            location: format!("record {:?} of item {:?}", r.record_id, r.item_id),
        })?;
        let pos = *by_text.entry(value.clone()).or_insert_with(|| {
            classes.push(NormalizedText {
                value,
                source_record_ids: Vec::new(),
            });
            classes.len() - 1
        });
        classes[pos].source_record_ids.push(r.record_id.clone());
        index.insert(r.record_id.clone(), pos);
    }
    Ok(ExactClasses { classes, index })
}
