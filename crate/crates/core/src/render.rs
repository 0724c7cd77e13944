//! SVG and JSON renderings of commonality and dendrograms.
//!
//! Rendering adds no analysis: every width, weight, height and bar length in
//! the SVG is also carried as a `data-*` attribute and in the JSON form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::clustering::Dendrogram;
use crate::corpus::Item;
use crate::error::{Error, Result};
use crate::matrix::CommonalityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeWeight {
    /// Sum of the item's commonality with every other item.
    #[default]
    Sum,
    /// Largest commonality with any other item.
    MaxRibbon,
}

impl std::str::FromStr for NodeWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(NodeWeight::Sum),
            "max-ribbon" => Ok(NodeWeight::MaxRibbon),
            other => Err(Error::Usage(format!("unknown node weight {other:?}"))),
        }
    }
}

impl std::fmt::Display for NodeWeight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NodeWeight::Sum => "sum",
            NodeWeight::MaxRibbon => "max-ribbon",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenealogyNode {
    pub id: String,
    pub title: String,
    pub weight: usize,
    /// Chronological position, 0 = earliest.
    pub x: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ribbon {
    /// The earlier item.
    pub from: String,
    pub to: String,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenealogyLayout {
    pub nodes: Vec<GenealogyNode>,
    pub ribbons: Vec<Ribbon>,
}

#[derive(Debug, Clone)]
pub struct Rendered<T> {
    pub data: T,
    pub svg: String,
    pub warnings: Vec<String>,
}

/// Matrix positions in chronological order. With `order` given it is used as
/// is; otherwise every item needs a release date.
pub fn chronological(cm: &CommonalityMatrix, order: Option<&[String]>) -> Result<Vec<usize>> {
    match order {
        Some(ids) => {
            let positions = ids
                .iter()
                .map(|id| cm.position(id).ok_or_else(|| Error::Reference(format!("unknown item {id:?} in order"))))
                .collect::<Result<Vec<usize>>>()?;
            let mut seen = positions.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != cm.len() || positions.len() != cm.len() {
                return Err(Error::Ordering(format!(
                    "explicit order lists {} distinct of {} items",
                    seen.len(),
                    cm.len()
                )));
            }
            Ok(positions)
        }
        None => {
            if let Some(undated) = cm.items.iter().find(|i| i.release_date.is_none()) {
                return Err(Error::Ordering(format!(
                    "item {:?} has no release date and no explicit order was given",
                    undated.item_id
                )));
            }
            let mut idx: Vec<usize> = (0..cm.len()).collect();
            idx.sort_by_key(|&i| cm.items[i].release_date);
            Ok(idx)
        }
    }
}

pub fn genealogy_layout(
    cm: &CommonalityMatrix,
    order: Option<&[String]>,
    min_edge: usize,
    weight: NodeWeight,
) -> Result<(GenealogyLayout, Vec<String>)> {
    let chrono = chronological(cm, order)?;
    let n = cm.len();
    let nodes = chrono
        .iter()
        .enumerate()
        .map(|(x, &i)| {
            let others = (0..n).filter(|&j| j != i).map(|j| cm.get(i, j));
            let w = match weight {
                NodeWeight::Sum => others.sum(),
                NodeWeight::MaxRibbon => others.max().unwrap_or(0),
            };
            GenealogyNode {
                id: cm.items[i].item_id.clone(),
                title: cm.items[i].title.clone(),
                weight: w,
                x,
            }
        })
        .collect();

    let threshold = min_edge.max(1);
    let mut ribbons = Vec::new();
    let mut max_shared = 0;
    for (a, &i) in chrono.iter().enumerate() {
        for &j in &chrono[a + 1..] {
            let w = cm.get(i, j);
            max_shared = max_shared.max(w);
            if w >= threshold {
                ribbons.push(Ribbon {
                    from: cm.items[i].item_id.clone(),
                    to: cm.items[j].item_id.clone(),
                    width: w,
                });
            }
        }
    }
    let mut warnings = Vec::new();
    if ribbons.is_empty() && max_shared > 0 {
        let msg = format!("min_edge {min_edge} exceeds the largest commonality {max_shared}; no ribbons drawn");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok((GenealogyLayout { nodes, ribbons }, warnings))
}

pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn svg_open(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">
<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#
    );
}

/// Chronological ribbon chart: one bar per item, left to right by date, with
/// a ribbon between every pair sharing at least `min_edge` classes.
pub fn render_genealogy(
    cm: &CommonalityMatrix,
    order: Option<&[String]>,
    min_edge: usize,
    weight: NodeWeight,
) -> Result<Rendered<GenealogyLayout>> {
    let (layout, warnings) = genealogy_layout(cm, order, min_edge, weight)?;

    const BAR: f64 = 14.0;
    const GAP: f64 = 90.0;
    const TOP: f64 = 30.0;
    const PLOT: f64 = 420.0;
    const MARGIN: f64 = 40.0;
    const LABEL: f64 = 140.0;
    let n = layout.nodes.len();
    let width = 2.0 * MARGIN + BAR + GAP * n.saturating_sub(1) as f64;
    let height = TOP + PLOT + LABEL;
    let max_weight = layout.nodes.iter().map(|n| n.weight).max().unwrap_or(0).max(1) as f64;
    let scale = PLOT / max_weight;
    let x_of = |x: usize| MARGIN + GAP * x as f64;
    let pos: std::collections::HashMap<&str, usize> =
        layout.nodes.iter().map(|n| (n.id.as_str(), n.x)).collect();

    // Ribbons stack on each bar in the chronological order of their partner.
    let mut offsets = vec![0.0f64; n];
    let mut slots: Vec<(f64, f64)> = Vec::with_capacity(layout.ribbons.len());
    let mut by_node: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (r, ribbon) in layout.ribbons.iter().enumerate() {
        let (a, b) = (pos[ribbon.from.as_str()], pos[ribbon.to.as_str()]);
        by_node[a].push((b, r));
        by_node[b].push((a, r));
        slots.push((0.0, 0.0));
    }
    for (node, list) in by_node.iter_mut().enumerate() {
        list.sort_unstable();
        for &(_, r) in list.iter() {
            let h = layout.ribbons[r].width as f64 * scale;
            if pos[layout.ribbons[r].from.as_str()] == node {
                slots[r].0 = offsets[node];
            } else {
                slots[r].1 = offsets[node];
            }
            offsets[node] += h;
        }
    }

    let mut out = String::new();
    svg_open(&mut out, width, height);
    out.push_str("<g class=\"ribbons\">\n");
    for (r, ribbon) in layout.ribbons.iter().enumerate() {
        let (a, b) = (pos[ribbon.from.as_str()], pos[ribbon.to.as_str()]);
        let h = ribbon.width as f64 * scale;
        let (x0, x1) = (x_of(a) + BAR, x_of(b));
        let (y0, y1) = (TOP + slots[r].0, TOP + slots[r].1);
        let mid = (x0 + x1) / 2.0;
        let hue = (a * 137) % 360;
        let _ = writeln!(
            out,
            r#"<path data-from="{}" data-to="{}" data-width="{}" d="M{x0:.2},{y0:.2} C{mid:.2},{y0:.2} {mid:.2},{y1:.2} {x1:.2},{y1:.2} L{x1:.2},{:.2} C{mid:.2},{:.2} {mid:.2},{:.2} {x0:.2},{:.2} Z" fill="hsl({hue},60%,50%)" fill-opacity="0.35"><title>{} → {}: {}</title></path>"#,
            xml_escape(&ribbon.from),
            xml_escape(&ribbon.to),
            ribbon.width,
            y1 + h,
            y1 + h,
            y0 + h,
            y0 + h,
            xml_escape(&layout.nodes[a].title),
            xml_escape(&layout.nodes[b].title),
            ribbon.width,
        );
    }
    out.push_str("</g>\n<g class=\"nodes\">\n");
    for node in &layout.nodes {
        let x = x_of(node.x);
        let h = node.weight as f64 * scale;
        let _ = writeln!(
            out,
            r##"<rect data-id="{}" data-weight="{}" x="{x:.2}" y="{TOP:.2}" width="{BAR:.2}" height="{h:.2}" fill="#333"><title>{}: {}</title></rect>"##,
            xml_escape(&node.id),
            node.weight,
            xml_escape(&node.title),
            node.weight,
        );
        let lx = x + BAR / 2.0;
        let ly = TOP + PLOT + 10.0;
        let _ = writeln!(
            out,
            r#"<text x="{lx:.2}" y="{ly:.2}" transform="rotate(60 {lx:.2} {ly:.2})">{}</text>"#,
            xml_escape(&node.title)
        );
    }
    out.push_str("</g>\n</svg>\n");

    Ok(Rendered {
        data: layout,
        svg: out,
        warnings,
    })
}

/// Merge tree with leaves stacked top to bottom and heights growing to the
/// right.
pub fn render_dendrogram(dend: &Dendrogram) -> String {
    const ROW: f64 = 18.0;
    const LABEL: f64 = 260.0;
    const PLOT: f64 = 420.0;
    const TOP: f64 = 20.0;
    let n = dend.len();
    let order = dend.leaf_order();
    let max_h = dend.merges.iter().map(|m| m.height).fold(0.0f64, f64::max);
    let scale = if max_h > 0.0 { PLOT / max_h } else { 0.0 };
    let width = LABEL + PLOT + 60.0;
    let height = TOP * 2.0 + ROW * n as f64 + 20.0;

    let mut y = vec![0.0f64; 2 * n - 1];
    for (row, &leaf) in order.iter().enumerate() {
        y[leaf] = TOP + ROW * (row as f64 + 0.5);
    }
    let x_of = |h: f64| LABEL + h * scale;

    let mut out = String::new();
    svg_open(&mut out, width, height);
    out.push_str("<g class=\"leaves\">\n");
    for (row, &leaf) in order.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text data-leaf="{leaf}" data-row="{row}" x="{:.2}" y="{:.2}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            LABEL - 6.0,
            y[leaf],
            xml_escape(&dend.leaves[leaf])
        );
    }
    out.push_str("</g>\n<g class=\"merges\" stroke=\"#222\" fill=\"none\">\n");
    for (i, m) in dend.merges.iter().enumerate() {
        let node = n + i;
        let (yl, yr) = (y[m.left], y[m.right]);
        y[node] = (yl + yr) / 2.0;
        let x = x_of(m.height);
        let (xl, xr) = (x_of(dend.node_height(m.left)), x_of(dend.node_height(m.right)));
        let _ = writeln!(
            out,
            r#"<path data-node="{node}" data-height="{}" d="M{xl:.2},{yl:.2} H{x:.2} V{yr:.2} H{xr:.2}"/>"#,
            m.height
        );
    }
    out.push_str("</g>\n");
    let axis_y = TOP + ROW * n as f64 + 10.0;
    let _ = writeln!(
        out,
        r##"<line x1="{LABEL:.2}" y1="{axis_y:.2}" x2="{:.2}" y2="{axis_y:.2}" stroke="#888"/>
<text x="{LABEL:.2}" y="{:.2}">0</text>
<text x="{:.2}" y="{:.2}" text-anchor="end">{max_h:.3}</text>"##,
        LABEL + PLOT,
        axis_y + 14.0,
        LABEL + PLOT,
        axis_y + 14.0,
    );
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileBar {
    pub id: String,
    pub title: String,
    pub value: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub item: String,
    pub title: String,
    pub bars: Vec<ProfileBar>,
}

/// Shared-class counts between `item_id` and every other item, one
/// horizontal bar each. Bars are chronological when every item is dated,
/// otherwise in matrix order.
pub fn render_profile(item_id: &str, cm: &CommonalityMatrix) -> Result<Rendered<Profile>> {
    let me = cm
        .position(item_id)
        .ok_or_else(|| Error::Reference(format!("unknown item {item_id:?}")))?;
    let order = chronological(cm, None).unwrap_or_else(|_| (0..cm.len()).collect());
    let bars: Vec<ProfileBar> = order
        .into_iter()
        .filter(|&j| j != me)
        .map(|j| ProfileBar {
            id: cm.items[j].item_id.clone(),
            title: cm.items[j].title.clone(),
            value: cm.get(me, j),
        })
        .collect();
    let profile = Profile {
        item: item_id.to_string(),
        title: cm.items[me].title.clone(),
        bars,
    };

    const ROW: f64 = 20.0;
    const LABEL: f64 = 220.0;
    const PLOT: f64 = 360.0;
    const TOP: f64 = 36.0;
    let max_v = profile.bars.iter().map(|b| b.value).max().unwrap_or(0).max(1) as f64;
    let scale = PLOT / max_v;
    let width = LABEL + PLOT + 60.0;
    let height = TOP + ROW * profile.bars.len() as f64 + 20.0;

    let mut out = String::new();
    svg_open(&mut out, width, height);
    let _ = writeln!(out, r#"<text x="10" y="20" font-size="13">{}</text>"#, xml_escape(&profile.title));
    for (row, bar) in profile.bars.iter().enumerate() {
        let y = TOP + ROW * row as f64;
        let w = bar.value as f64 * scale;
        let _ = writeln!(
            out,
            r##"<g data-id="{}" data-value="{}"><text x="{:.2}" y="{:.2}" text-anchor="end" dominant-baseline="middle">{}</text><rect x="{LABEL:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="#4a7"/><text x="{:.2}" y="{:.2}" dominant-baseline="middle">{}</text></g>"##,
            xml_escape(&bar.id),
            bar.value,
            LABEL - 6.0,
            y + ROW / 2.0,
            xml_escape(&bar.title),
            y + 3.0,
            ROW - 6.0,
            LABEL + w + 4.0,
            y + ROW / 2.0,
            bar.value,
        );
    }
    out.push_str("</svg>\n");

    Ok(Rendered {
        data: profile,
        svg: out,
        warnings: Vec::new(),
    })
}

/// Items of `cm` that carry no release date.
pub fn undated(cm: &CommonalityMatrix) -> Vec<&Item> {
    cm.items.iter().filter(|i| i.release_date.is_none()).collect()
}
