//! Frequent final classes within groups of items.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::Partition;
use crate::error::{Error, Result};
use crate::matrix::IncidenceMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Group {
    pub group_id: String,
    /// Item ids.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSpecRow {
    pub class_id: usize,
    pub representative: String,
    pub support: usize,
    pub fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSpecTable {
    pub group_id: String,
    pub members: Vec<String>,
    pub threshold: f64,
    /// Minimum support a class needs to be listed.
    pub cutoff: usize,
    pub rows: Vec<GroupSpecRow>,
}

/// `ceil(threshold * group_size)`, so 0.3 of 10 needs 3 items and 0.6 of 3
/// needs 2.
pub fn support_cutoff(group_size: usize, threshold: f64) -> usize {
    // 0.6 * 5 evaluates to 3.0000000000000004 in binary floating point.
    let raw = threshold * group_size as f64;
    let cutoff = (raw - 1e-9 * raw.abs().max(1.0)).ceil();
    (cutoff.max(1.0)) as usize
}

/// One table per non-empty group. `categories` maps class ids to the
/// analyst-assigned category shown next to each row.
pub fn group_spec_table(
    groups: &[Group],
    inc: &IncidenceMatrix,
    threshold: f64,
    categories: Option<&BTreeMap<usize, String>>,
) -> Result<(Vec<GroupSpecTable>, Vec<String>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::OutOfRange {
            what: "threshold",
            message: format!("{threshold} is not in (0, 1]"),
        });
    }
    let class_items = inc.class_item_sets();
    let reps = inc.representative_texts();
    let mut tables = Vec::new();
    let mut warnings = Vec::new();

    for group in groups {
        if group.members.is_empty() {
            let msg = format!("group {:?} is empty; skipped", group.group_id);
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let cols = group
            .members
            .iter()
            .map(|id| {
                inc.column_of(id)
                    .ok_or_else(|| Error::Reference(format!("group {:?} lists unknown item {id:?}", group.group_id)))
            })
            .collect::<Result<Vec<usize>>>()?;
        let size = cols.len();
        let cutoff = support_cutoff(size, threshold);
        let mut rows: Vec<GroupSpecRow> = class_items
            .iter()
            .enumerate()
            .filter_map(|(class_id, holders)| {
                let support = cols.iter().filter(|c| holders.contains(c)).count();
                (support >= cutoff).then(|| GroupSpecRow {
                    class_id,
                    representative: reps[class_id].clone(),
                    support,
                    fraction: support as f64 / size as f64,
                    category: categories.and_then(|c| c.get(&class_id).cloned()),
                })
            })
            .collect();
        rows.sort_by(|a, b| {
            b.support
                .cmp(&a.support)
                .then_with(|| a.representative.cmp(&b.representative))
                .then_with(|| a.class_id.cmp(&b.class_id))
        });
        tables.push(GroupSpecTable {
            group_id: group.group_id.clone(),
            members: group.members.clone(),
            threshold,
            cutoff,
            rows,
        });
    }
    Ok((tables, warnings))
}

/// Groups from a dendrogram cut. `leaf_ids` are the item ids of the leaves.
pub fn groups_from_partition(partition: &Partition, leaf_ids: &[String]) -> Vec<Group> {
    partition
        .groups
        .iter()
        .enumerate()
        .map(|(g, leaves)| Group {
            group_id: format!("cluster-{}", g + 1),
            members: leaves.iter().map(|&l| leaf_ids[l].clone()).collect(),
        })
        .collect()
}

/// Groups from item `group_label`s, in order of first appearance.
pub fn groups_from_labels(items: &[crate::corpus::Item]) -> Vec<Group> {
    let mut groups: Vec<Group> = Vec::new();
    for item in items {
        let Some(label) = &item.group_label else { continue };
        match groups.iter_mut().find(|g| &g.group_id == label) {
            Some(g) => g.members.push(item.item_id.clone()),
            None => groups.push(Group {
                group_id: label.clone(),
                members: vec![item.item_id.clone()],
            }),
        }
    }
    groups
}

#[derive(Deserialize)]
struct GroupRow {
    item_id: String,
    group_id: String,
}

/// Reads `item_id,group_id` rows; groups keep first-appearance order.
pub fn read_groups_csv(path: &Path) -> Result<Vec<Group>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut groups: Vec<Group> = Vec::new();
    for row in csv::Reader::from_reader(file).deserialize::<GroupRow>() {
        let row = row?;
        match groups.iter_mut().find(|g| g.group_id == row.group_id) {
            Some(g) => g.members.push(row.item_id),
            None => groups.push(Group {
                group_id: row.group_id,
                members: vec![row.item_id],
            }),
        }
    }
    Ok(groups)
}

#[derive(Deserialize)]
struct CategoryRow {
    class_id: usize,
    category: String,
}

/// Reads the optional `class_id,category` annotation file.
pub fn read_categories_csv(path: &Path) -> Result<BTreeMap<usize, String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize::<CategoryRow>()
        .map(|r| r.map(|r| (r.class_id, r.category)).map_err(Error::from))
        .collect()
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

pub fn to_markdown(tables: &[GroupSpecTable]) -> String {
    let mut out = String::new();
    for t in tables {
        let with_category = t.rows.iter().any(|r| r.category.is_some());
        let _ = writeln!(
            out,
            "### {} ({} items, support ≥ {} = {:.0}%)\n",
            md_escape(&t.group_id),
            t.members.len(),
            t.cutoff,
            t.threshold * 100.0
        );
        if with_category {
            out.push_str("| class | category | spec | support |\n|---:|---|---|---:|\n");
        } else {
            out.push_str("| class | spec | support |\n|---:|---|---:|\n");
        }
        for r in &t.rows {
            let support = format!("{}/{}", r.support, t.members.len());
            if with_category {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} |",
                    r.class_id,
                    md_escape(r.category.as_deref().unwrap_or("")),
                    md_escape(&r.representative),
                    support
                );
            } else {
                let _ = writeln!(out, "| {} | {} | {} |", r.class_id, md_escape(&r.representative), support);
            }
        }
        out.push('\n');
    }
    out
}

/// `group_id,class_id,category,representative,support,group_size,fraction`.
pub fn write_csv(tables: &[GroupSpecTable], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["group_id", "class_id", "category", "representative", "support", "group_size", "fraction"])?;
    for t in tables {
        for r in &t.rows {
            w.write_record([
                t.group_id.clone(),
                r.class_id.to_string(),
                r.category.clone().unwrap_or_default(),
                r.representative.clone(),
                r.support.to_string(),
                t.members.len().to_string(),
                format!("{:.4}", r.fraction),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
