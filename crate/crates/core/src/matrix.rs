//! Spec-instance × item incidence and item × item commonality.
//!
//! The incidence matrix has one row per spec record and one column per item.
//! A cell is 1 when the column's item holds any record of the row's final
//! class. Commonality counts distinct final classes shared by two items.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adjudication::EquivalenceClasses;
use crate::corpus::{Corpus, Item, SpecRecord};
use crate::error::{Error, Result};
use crate::normalize::{normalize_text, ExactClasses};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColumnOrder {
    /// Ascending release date; undated items follow dated ones. Ties keep
    /// input order.
    #[default]
    ReleaseDate,
    Input,
}

impl std::str::FromStr for ColumnOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "release-date" => Ok(ColumnOrder::ReleaseDate),
            "input" => Ok(ColumnOrder::Input),
            other => Err(Error::Usage(format!("unknown column order {other:?}"))),
        }
    }
}

impl std::fmt::Display for ColumnOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ColumnOrder::ReleaseDate => "release-date",
            ColumnOrder::Input => "input",
        })
    }
}

/// Items sorted by `order`.
pub fn order_items(items: &[Item], order: ColumnOrder) -> Vec<Item> {
    let mut out = items.to_vec();
    if order == ColumnOrder::ReleaseDate {
        out.sort_by_key(|i| (i.release_date.is_none(), i.release_date));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidenceRow {
    pub record_id: String,
    pub item_id: String,
    pub raw_text: String,
    pub canonical_text: String,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    pub rows: Vec<IncidenceRow>,
    pub items: Vec<Item>,
    cells: Vec<u8>,
    class_count: usize,
}

#[derive(Serialize, Deserialize)]
struct IncidenceFile {
    items: Vec<Item>,
    class_count: usize,
    rows: Vec<IncidenceRow>,
}

impl IncidenceMatrix {
    fn assemble(rows: Vec<IncidenceRow>, items: Vec<Item>, holders: &[BTreeSet<usize>]) -> Self {
        let w = items.len();
        let mut cells = vec![0u8; rows.len() * w];
        for (i, row) in rows.iter().enumerate() {
            for &j in &holders[row.class_id] {
                cells[i * w + j] = 1;
            }
        }
        IncidenceMatrix {
            rows,
            items,
            cells,
            class_count: holders.len(),
        }
    }

    /// Rows, columns and class count; cells are rebuilt on read.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let body = IncidenceFile {
            items: self.items.clone(),
            class_count: self.class_count,
            rows: self.rows.clone(),
        };
        serde_json::to_writer(&mut w, &body)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let body: IncidenceFile = serde_json::from_reader(BufReader::new(file))?;
        let col: HashMap<&str, usize> = body.items.iter().enumerate().map(|(j, i)| (i.item_id.as_str(), j)).collect();
        let mut holders = vec![BTreeSet::new(); body.class_count];
        for r in &body.rows {
            let j = *col
                .get(r.item_id.as_str())
                .ok_or_else(|| Error::Reference(format!("row {:?} references unknown item {:?}", r.record_id, r.item_id)))?;
            holders
                .get_mut(r.class_id)
                .ok_or_else(|| Error::Reference(format!("row {:?} has class {} of {}", r.record_id, r.class_id, body.class_count)))?
                .insert(j);
        }
        Ok(IncidenceMatrix::assemble(body.rows, body.items, &holders))
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.items.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn cell(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.items.len() + col]
    }

    pub fn row_cells(&self, row: usize) -> &[u8] {
        let w = self.items.len();
        &self.cells[row * w..(row + 1) * w]
    }

    pub fn column_of(&self, item_id: &str) -> Option<usize> {
        self.items.iter().position(|i| i.item_id == item_id)
    }

    /// Distinct final classes held by each column, read off the cells.
    pub fn item_class_sets(&self) -> Vec<BTreeSet<usize>> {
        let mut sets = vec![BTreeSet::new(); self.items.len()];
        for (r, row) in self.rows.iter().enumerate() {
            for (j, set) in sets.iter_mut().enumerate() {
                if self.cell(r, j) == 1 {
                    set.insert(row.class_id);
                }
            }
        }
        sets
    }

    /// Columns holding each final class, read off the cells.
    pub fn class_item_sets(&self) -> Vec<BTreeSet<usize>> {
        let mut sets = vec![BTreeSet::new(); self.class_count];
        for (r, row) in self.rows.iter().enumerate() {
            for j in 0..self.items.len() {
                if self.cell(r, j) == 1 {
                    sets[row.class_id].insert(j);
                }
            }
        }
        sets
    }

    /// Most frequent raw text of each final class; ties go to the earliest row.
    pub fn representative_texts(&self) -> Vec<String> {
        let mut counts: Vec<Vec<(&str, usize)>> = vec![Vec::new(); self.class_count];
        for row in &self.rows {
            let bucket = &mut counts[row.class_id];
            match bucket.iter_mut().find(|(t, _)| *t == row.raw_text) {
                Some((_, c)) => *c += 1,
                None => bucket.push((row.raw_text.as_str(), 1)),
            }
        }
        counts
            .into_iter()
            .map(|bucket| {
                let mut best: Option<(&str, usize)> = None;
                for (t, c) in bucket {
                    if best.is_none_or(|(_, bc)| c > bc) {
                        best = Some((t, c));
                    }
                }
                best.map(|(t, _)| t.to_string()).unwrap_or_default()
            })
            .collect()
    }

    /// Writes the `GameMechanics,GameTitle,<item title>...` layout.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header = vec!["GameMechanics".to_string(), "GameTitle".to_string()];
        header.extend(self.items.iter().map(|i| i.title.clone()));
        w.write_record(&header)?;
        let titles: HashMap<&str, &str> = self
            .items
            .iter()
            .map(|i| (i.item_id.as_str(), i.title.as_str()))
            .collect();
        for (r, row) in self.rows.iter().enumerate() {
            let mut rec = vec![row.raw_text.clone(), titles[row.item_id.as_str()].to_string()];
            rec.extend(self.row_cells(r).iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Incidence rows in corpus order and columns in `order`.
pub fn build_incidence_with(corpus: &Corpus, classes: &EquivalenceClasses, order: ColumnOrder) -> Result<IncidenceMatrix> {
    let items = order_items(&corpus.items, order);
    let col: HashMap<&str, usize> = items
        .iter()
        .enumerate()
        .map(|(j, i)| (i.item_id.as_str(), j))
        .collect();

    let mut rows = Vec::with_capacity(corpus.records.len());
    let mut holders: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); classes.len()];
    for r in &corpus.records {
        let class_id = classes
            .class_of(&r.record_id)
            .ok_or_else(|| Error::Reference(format!("record {:?} has no final class", r.record_id)))?;
        let j = *col
            .get(r.item_id.as_str())
            .ok_or_else(|| Error::Reference(format!("record {:?} references unknown item {:?}", r.record_id, r.item_id)))?;
        holders[class_id].insert(j);
        rows.push(IncidenceRow {
            record_id: r.record_id.clone(),
            item_id: r.item_id.clone(),
            raw_text: r.raw_text.clone(),
            canonical_text: normalize_text(&r.raw_text)?,
            class_id,
        });
    }

    Ok(IncidenceMatrix::assemble(rows, items, &holders))
}

/// [`build_incidence_with`] using release-date column order.
pub fn build_incidence(corpus: &Corpus, classes: &EquivalenceClasses) -> Result<IncidenceMatrix> {
    build_incidence_with(corpus, classes, ColumnOrder::default())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommonalityMatrix {
    pub items: Vec<Item>,
    pub counts: Vec<Vec<usize>>,
}

impl CommonalityMatrix {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn position(&self, item_id: &str) -> Option<usize> {
        self.items.iter().position(|i| i.item_id == item_id)
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.counts[i][j]
    }

    /// Square CSV with item titles on both axes.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header = vec![String::new()];
        header.extend(self.items.iter().map(|i| i.title.clone()));
        w.write_record(&header)?;
        for (item, row) in self.items.iter().zip(&self.counts) {
            let mut rec = vec![item.title.clone()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads [`CommonalityMatrix::write_json`] output, rejecting non-square or
    /// asymmetric counts.
    pub fn read_json(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let cm: CommonalityMatrix = serde_json::from_reader(BufReader::new(file))?;
        let n = cm.items.len();
        if cm.counts.len() != n || cm.counts.iter().any(|r| r.len() != n) {
            return Err(Error::Validation(format!("commonality matrix must be {n}x{n}")));
        }
        if (0..n).any(|i| (0..i).any(|j| cm.counts[i][j] != cm.counts[j][i])) {
            return Err(Error::Validation("commonality matrix is not symmetric".into()));
        }
        Ok(cm)
    }
}

fn intersection_counts(items: Vec<Item>, sets: &[BTreeSet<usize>]) -> CommonalityMatrix {
    let n = sets.len();
    let mut counts = vec![vec![0; n]; n];
    for i in 0..n {
        counts[i][i] = sets[i].len();
        for j in i + 1..n {
            let c = sets[i].intersection(&sets[j]).count();
            counts[i][j] = c;
            counts[j][i] = c;
        }
    }
    CommonalityMatrix { items, counts }
}

/// Shared distinct final classes per item pair, from the incidence cells.
pub fn commonality(inc: &IncidenceMatrix) -> CommonalityMatrix {
    intersection_counts(inc.items.clone(), &inc.item_class_sets())
}

/// Shared distinct final classes per item pair, straight from each item's
/// records. Columns follow `items`.
pub fn commonality_from_classes(corpus: &Corpus, classes: &EquivalenceClasses, items: &[Item]) -> Result<CommonalityMatrix> {
    let sets = items
        .iter()
        .map(|item| {
            corpus
                .records_of(&item.item_id)
                .map(|r| {
                    classes
                        .class_of(&r.record_id)
                        .ok_or_else(|| Error::Reference(format!("record {:?} has no final class", r.record_id)))
                })
                .collect::<Result<BTreeSet<usize>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(intersection_counts(items.to_vec(), &sets))
}

/// A file in the `GameMechanics,GameTitle,<titles>...` layout, read back
/// without interpretation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceTable {
    pub titles: Vec<String>,
    pub rows: Vec<IncidenceTableRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceTableRow {
    pub text: String,
    pub origin_title: String,
    pub cells: Vec<u8>,
}

/// Reads the incidence layout. Comma- or tab-separated, detected from the
/// header line; a UTF-8 BOM is ignored.
pub fn read_incidence_csv(path: &Path) -> Result<IncidenceTable> {
    let display = path.display().to_string();
    let mut first = String::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    let delimiter = if first.contains('\t') && !first.contains(',') { b'\t' } else { b',' };

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Input {
            path: display.clone(),
            line: 1,
            message: "empty file".into(),
        })??;
    if header.len() < 2 {
        return Err(Error::Input {
            path: display,
            line: 1,
            message: "expected at least GameMechanics,GameTitle columns".into(),
        });
    }
    let titles: Vec<String> = header.iter().skip(2).map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if rec.len() != titles.len() + 2 {
            return Err(Error::Input {
                path: display,
                line,
                message: format!("expected {} fields, found {}", titles.len() + 2, rec.len()),
            });
        }
        let cells = rec
            .iter()
            .skip(2)
            .map(|f| match f.trim() {
                "0" | "" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::Input {
                    path: display.clone(),
                    line,
                    message: format!("cell {other:?} is not 0 or 1"),
                }),
            })
            .collect::<Result<Vec<u8>>>()?;
        rows.push(IncidenceTableRow {
            text: rec[0].trim_start_matches('\u{feff}').to_string(),
            origin_title: rec[1].trim().to_string(),
            cells,
        });
    }
    Ok(IncidenceTable { titles, rows })
}

impl IncidenceTable {
    /// A corpus with one item per column and one record per row, attributed
    /// to `annotator_id`. Rows whose origin title is not a column add an item.
    pub fn to_corpus(&self, annotator_id: &str) -> Corpus {
        let mut items: Vec<Item> = self
            .titles
            .iter()
            .map(|t| Item {
                item_id: t.clone(),
                title: t.clone(),
                release_date: None,
                group_label: None,
            })
            .collect();
        let mut seqs: HashMap<&str, u32> = HashMap::new();
        let mut records = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            if !items.iter().any(|i| i.item_id == row.origin_title) {
                items.push(Item {
                    item_id: row.origin_title.clone(),
                    title: row.origin_title.clone(),
                    release_date: None,
                    group_label: None,
                });
            }
            let seq = seqs.entry(row.origin_title.as_str()).or_insert(0);
            *seq += 1;
            records.push(SpecRecord {
                record_id: crate::corpus::derived_record_id(&row.origin_title, annotator_id, *seq),
                item_id: row.origin_title.clone(),
                raw_text: row.text.clone(),
                annotator_id: annotator_id.to_string(),
                seq: *seq,
            });
        }
        Corpus::new(items, records)
    }

    /// Incidence matrix keeping this table's cells, with exact classes as
    /// final classes. Columns are this table's titles. `corpus` must come
    /// from [`IncidenceTable::to_corpus`].
    pub fn to_matrix(&self, corpus: &Corpus, exact: &ExactClasses) -> Result<IncidenceMatrix> {
        let w = self.titles.len();
        let mut rows = Vec::with_capacity(self.rows.len());
        let mut cells = Vec::with_capacity(self.rows.len() * w);
        for (record, row) in corpus.records.iter().zip(&self.rows) {
            let class_id = exact
                .class_of(&record.record_id)
                .ok_or_else(|| Error::Reference(format!("record {:?} has no class", record.record_id)))?;
            rows.push(IncidenceRow {
                record_id: record.record_id.clone(),
                item_id: record.item_id.clone(),
                raw_text: record.raw_text.clone(),
                canonical_text: exact.classes[class_id].value.clone(),
                class_id,
            });
            cells.extend_from_slice(&row.cells);
        }
        let items = self
            .titles
            .iter()
            .map(|t| corpus.item(t).cloned().expect("corpus built from this table"))
            .collect();
        Ok(IncidenceMatrix {
            rows,
            items,
            cells,
            class_count: exact.len(),
        })
    }
}
