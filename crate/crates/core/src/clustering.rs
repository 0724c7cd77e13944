//! Agglomerative hierarchical clustering of items or of frequent spec classes.
//!
//! Cluster distances are updated with the Lance–Williams recurrence. Ward
//! linkage works on squared distances and reports `sqrt` heights, so two
//! singletons merge at their original distance.
//!
//! Node ids follow the usual convention: leaves are `0..n`, the cluster made
//! by merge `i` is `n + i`. When several pairs are equally close, the pair
//! with the smallest `(min id, max id)` merges first.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adjudication::UnionFind;
use crate::error::{Error, Result};
use crate::matrix::IncidenceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Jaccard,
    Dice,
    EuclideanBinary,
}

impl Metric {
    /// Jaccard for complete linkage, binary Euclidean for Ward.
    pub fn default_for(linkage: Linkage) -> Self {
        match linkage {
            Linkage::Complete => Metric::Jaccard,
            Linkage::Ward => Metric::EuclideanBinary,
        }
    }

    fn between(self, a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> Option<f64> {
        let inter = a.intersection(b).count() as f64;
        let (na, nb) = (a.len() as f64, b.len() as f64);
        match self {
            Metric::Jaccard => {
                let union = na + nb - inter;
                (union > 0.0).then(|| 1.0 - inter / union)
            }
            Metric::Dice => (na + nb > 0.0).then(|| 1.0 - 2.0 * inter / (na + nb)),
            Metric::EuclideanBinary => Some((na + nb - 2.0 * inter).sqrt()),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Jaccard => "jaccard",
            Metric::Dice => "dice",
            Metric::EuclideanBinary => "euclidean-binary",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jaccard" => Ok(Metric::Jaccard),
            "dice" => Ok(Metric::Dice),
            "euclidean-binary" | "euclidean_binary" => Ok(Metric::EuclideanBinary),
            other => Err(Error::Usage(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Complete,
    Ward,
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linkage::Complete => "complete",
            Linkage::Ward => "ward",
        })
    }
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" => Ok(Linkage::Complete),
            "ward" => Ok(Linkage::Ward),
            other => Err(Error::Usage(format!("unknown linkage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// One entity per item, described by its set of final classes.
    Items,
    /// One entity per final class held by at least `min_items` items,
    /// described by the set of items holding it.
    Specs { min_items: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    /// Item ids or class ids, parallel to `labels`.
    pub ids: Vec<String>,
    pub metric: Option<Metric>,
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Checks squareness, symmetry, zero diagonal and non-negativity.
    pub fn from_rows(labels: Vec<String>, rows: Vec<Vec<f64>>, metric: Option<Metric>) -> Result<Self> {
        let n = labels.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Validation(format!("distance matrix must be {n}x{n}")));
        }
        for i in 0..n {
            for j in 0..n {
                let v = rows[i][j];
                if !v.is_finite() {
                    return Err(Error::Numeric(format!("non-finite distance at ({i}, {j})")));
                }
                if v < 0.0 || (i == j && v != 0.0) || v != rows[j][i] {
                    return Err(Error::Validation(format!(
                        "distance matrix is not symmetric, non-negative with zero diagonal at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(DistanceMatrix {
            ids: labels.clone(),
            labels,
            metric,
            n,
            d: rows.into_iter().flatten().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    /// Distances between binary feature sets.
    pub fn from_sets(labels: Vec<String>, ids: Vec<String>, sets: &[BTreeSet<usize>], metric: Metric) -> Result<Self> {
        if metric != Metric::EuclideanBinary {
            if let Some(i) = sets.iter().position(BTreeSet::is_empty) {
                return Err(Error::UndefinedDistance {
                    entity: labels[i].clone(),
                });
            }
        }
        let n = sets.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = metric.between(&sets[i], &sets[j]).ok_or_else(|| Error::UndefinedDistance {
                    entity: labels[i].clone(),
                })?;
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Ok(DistanceMatrix {
            labels,
            ids,
            metric: Some(metric),
            n,
            d,
        })
    }
}

/// A final class that passed [`spec_filter`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpecClass {
    pub class_id: usize,
    pub representative: String,
    pub support: usize,
    /// Columns of the incidence matrix holding this class.
    pub items: BTreeSet<usize>,
}

/// Final classes held by at least `min_items` items, by class id.
pub fn spec_filter(inc: &IncidenceMatrix, min_items: usize) -> Result<Vec<SpecClass>> {
    if min_items == 0 {
        return Err(Error::OutOfRange {
            what: "min_items",
            message: "must be at least 1".into(),
        });
    }
    let reps = inc.representative_texts();
    Ok(inc
        .class_item_sets()
        .into_iter()
        .enumerate()
        .filter(|(_, items)| items.len() >= min_items)
        .map(|(class_id, items)| SpecClass {
            class_id,
            representative: reps[class_id].clone(),
            support: items.len(),
            items,
        })
        .collect())
}

pub fn distance_matrix(inc: &IncidenceMatrix, axis: Axis, metric: Metric) -> Result<DistanceMatrix> {
    match axis {
        Axis::Items => {
            if inc.n_cols() < 2 {
                return Err(Error::InsufficientData(format!(
                    "item clustering needs at least 2 items, got {}",
                    inc.n_cols()
                )));
            }
            let labels = inc.items.iter().map(|i| i.title.clone()).collect();
            let ids = inc.items.iter().map(|i| i.item_id.clone()).collect();
            DistanceMatrix::from_sets(labels, ids, &inc.item_class_sets(), metric)
        }
        Axis::Specs { min_items } => {
            let specs = spec_filter(inc, min_items)?;
            if specs.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "only {} classes are held by at least {min_items} items",
                    specs.len()
                )));
            }
            let labels = specs.iter().map(|s| s.representative.clone()).collect();
            let ids = specs.iter().map(|s| s.class_id.to_string()).collect();
            let sets: Vec<BTreeSet<usize>> = specs.into_iter().map(|s| s.items).collect();
            DistanceMatrix::from_sets(labels, ids, &sets, metric)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Smaller node id of the two merged clusters.
    pub left: usize,
    pub right: usize,
    pub height: f64,
    /// Leaf count of the new cluster.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
    pub linkage: Linkage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
}

/// Relative tolerance under which two candidate distances count as tied.
const TIE_TOLERANCE: f64 = 1e-9;

fn closer(d: f64, key: (usize, usize), best_d: f64, best_key: (usize, usize)) -> bool {
    let tol = TIE_TOLERANCE * best_d.abs().max(1.0);
    if d < best_d - tol {
        true
    } else if d <= best_d + tol {
        key < best_key
    } else {
        false
    }
}

pub fn agglomerate(dist: &DistanceMatrix, linkage: Linkage) -> Result<Dendrogram> {
    let n = dist.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("clustering needs at least 2 entities, got {n}")));
    }
    if linkage == Linkage::Ward && dist.metric.is_some_and(|m| m != Metric::EuclideanBinary) {
        log::warn!(
            "Ward linkage on {} distances; proceeding on squared distances",
            dist.metric.unwrap()
        );
    }
    if let Some(bad) = dist.d.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite distance between {:?} and {:?}",
            dist.labels[bad / n],
            dist.labels[bad % n]
        )));
    }

    let mut d: Vec<f64> = match linkage {
        Linkage::Complete => dist.d.clone(),
        Linkage::Ward => dist.d.iter().map(|v| v * v).collect(),
    };
    let mut active = vec![true; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(usize, usize, f64, (usize, usize))> = None;
        for p in (0..n).filter(|&p| active[p]) {
            for q in (p + 1..n).filter(|&q| active[q]) {
                let v = d[p * n + q];
                let key = (node[p].min(node[q]), node[p].max(node[q]));
                if best.is_none_or(|(_, _, bd, bk)| closer(v, key, bd, bk)) {
                    best = Some((p, q, v, key));
                }
            }
        }
        let (p, q, dpq, key) = best.expect("at least two active clusters");
        let height = match linkage {
            Linkage::Complete => dpq,
            Linkage::Ward => dpq.max(0.0).sqrt(),
        };
        merges.push(Merge {
            left: key.0,
            right: key.1,
            height,
            size: size[p] + size[q],
        });

        let (sp, sq) = (size[p] as f64, size[q] as f64);
        for k in (0..n).filter(|&k| active[k] && k != p && k != q) {
            let (dpk, dqk) = (d[p * n + k], d[q * n + k]);
            let updated = match linkage {
                Linkage::Complete => dpk.max(dqk),
                Linkage::Ward => {
                    let sk = size[k] as f64;
                    (((sp + sk) * dpk + (sq + sk) * dqk - sk * dpq) / (sp + sq + sk)).max(0.0)
                }
            };
            d[p * n + k] = updated;
            d[k * n + p] = updated;
        }
        active[q] = false;
        node[p] = n + step;
        size[p] += size[q];
    }

    Ok(Dendrogram {
        leaves: dist.labels.clone(),
        merges,
        linkage,
        metric: dist.metric,
    })
}

/// Leaves split into groups. Groups are numbered by their smallest leaf.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

impl Partition {
    pub fn from_assignment(assignment: Vec<usize>) -> Self {
        let count = assignment.iter().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); count];
        for (leaf, &g) in assignment.iter().enumerate() {
            groups[g].push(leaf);
        }
        Partition { assignment, groups }
    }
}

/// Undoes the last `k - 1` merges.
pub fn cut(dend: &Dendrogram, k: usize) -> Result<Partition> {
    let n = dend.leaves.len();
    if k == 0 || k > n {
        return Err(Error::OutOfRange {
            what: "k",
            message: format!("cut level {k} outside 1..={n}"),
        });
    }
    let mut uf = UnionFind::new(n);
    let mut rep: Vec<usize> = (0..n).collect();
    for m in &dend.merges[..n - k] {
        let (a, b) = (rep[m.left], rep[m.right]);
        uf.union(a, b);
        rep.push(a);
    }
    Ok(Partition::from_assignment(uf.labels()))
}

impl Dendrogram {
    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    fn root(&self) -> usize {
        2 * self.leaves.len() - 2
    }

    fn children(&self, node: usize) -> Option<(usize, usize)> {
        let n = self.leaves.len();
        (node >= n).then(|| {
            let m = &self.merges[node - n];
            (m.left, m.right)
        })
    }

    pub fn node_height(&self, node: usize) -> f64 {
        let n = self.leaves.len();
        if node < n {
            0.0
        } else {
            self.merges[node - n].height
        }
    }

    /// Leaves left to right: a depth-first walk visiting the smaller child
    /// id first.
    pub fn leaf_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.leaves.len());
        let mut stack = vec![self.root()];
        while let Some(node) = stack.pop() {
            match self.children(node) {
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => out.push(node),
            }
        }
        out
    }

    /// Newick string; each branch length is the parent height minus the
    /// child height.
    pub fn to_newick(&self) -> String {
        fn walk(d: &Dendrogram, node: usize, parent_height: f64, out: &mut String) {
            match d.children(node) {
                Some((l, r)) => {
                    out.push('(');
                    walk(d, l, d.node_height(node), out);
                    out.push(',');
                    walk(d, r, d.node_height(node), out);
                    out.push(')');
                }
                None => out.push_str(&newick_label(&d.leaves[node])),
            }
            let _ = write!(out, ":{}", parent_height - d.node_height(node));
        }
        let mut out = String::new();
        let root = self.root();
        let (l, r) = self.children(root).expect("root is a merge");
        out.push('(');
        walk(self, l, self.node_height(root), &mut out);
        out.push(',');
        walk(self, r, self.node_height(root), &mut out);
        out.push_str(");");
        out
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn newick_label(label: &str) -> String {
    let plain = !label.is_empty()
        && !label
            .chars()
            .any(|c| c.is_whitespace() || "()[]':;,".contains(c));
    if plain {
        label.to_string()
    } else {
        format!("'{}'", label.replace('\'', "''"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| ((b'A' + i as u8) as char).to_string()).collect()
    }

    fn abc() -> DistanceMatrix {
        DistanceMatrix::from_rows(
            labels(3),
            vec![vec![0.0, 1.0, 4.0], vec![1.0, 0.0, 5.0], vec![4.0, 5.0, 0.0]],
            None,
        )
        .unwrap()
    }

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn complete_linkage_hand_trace() {
        let d = agglomerate(&abc(), Linkage::Complete).unwrap();
        assert_eq!(
            d.merges,
            vec![
                Merge { left: 0, right: 1, height: 1.0, size: 2 },
                Merge { left: 2, right: 3, height: 5.0, size: 3 },
            ]
        );
        assert_eq!(d.to_newick(), "(C:5,(A:1,B:1):4);");
    }

    #[test]
    fn ward_two_singletons_merge_at_their_distance() {
        let dm = DistanceMatrix::from_rows(labels(2), vec![vec![0.0, 2.5], vec![2.5, 0.0]], None).unwrap();
        let d = agglomerate(&dm, Linkage::Ward).unwrap();
        assert_eq!(d.merges.len(), 1);
        assert!((d.merges[0].height - 2.5).abs() < 1e-12);
    }

    #[test]
    fn ward_lance_williams_by_hand() {
        // d2(AB, C) = (2*16 + 2*25 - 1) / 3 = 27, height sqrt(27).
        let d = agglomerate(&abc(), Linkage::Ward).unwrap();
        assert!((d.merges[1].height - 27f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_smallest_label_pair() {
        let dm = DistanceMatrix::from_rows(
            labels(4),
            vec![
                vec![0.0, 1.0, 1.0, 1.0],
                vec![1.0, 0.0, 1.0, 1.0],
                vec![1.0, 1.0, 0.0, 1.0],
                vec![1.0, 1.0, 1.0, 0.0],
            ],
            None,
        )
        .unwrap();
        let d = agglomerate(&dm, Linkage::Complete).unwrap();
        let pairs: Vec<(usize, usize)> = d.merges.iter().map(|m| (m.left, m.right)).collect();
        assert_eq!(pairs, vec![(0, 1), (2, 3), (4, 5)]);
    }

    #[test]
    fn set_metrics() {
        let (a, b, c) = (set(&[0, 1]), set(&[1, 2]), set(&[5]));
        assert!((Metric::Jaccard.between(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(Metric::Jaccard.between(&a, &a).unwrap(), 0.0);
        assert_eq!(Metric::Jaccard.between(&a, &c).unwrap(), 1.0);
        assert_eq!(Metric::Dice.between(&a, &b).unwrap(), 0.5);
        assert_eq!(Metric::EuclideanBinary.between(&a, &b).unwrap(), 2f64.sqrt());
    }

    #[test]
    fn empty_set_is_undefined_under_jaccard() {
        let sets = vec![set(&[1]), set(&[])];
        let err = DistanceMatrix::from_sets(labels(2), labels(2), &sets, Metric::Jaccard).unwrap_err();
        assert!(matches!(err, Error::UndefinedDistance { ref entity } if entity == "B"));
        assert!(DistanceMatrix::from_sets(labels(2), labels(2), &sets, Metric::EuclideanBinary).is_ok());
    }

    #[test]
    fn non_finite_distances_are_rejected() {
        let err = DistanceMatrix::from_rows(labels(2), vec![vec![0.0, f64::NAN], vec![f64::NAN, 0.0]], None).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn cut_extremes_and_planted_blocks() {
        let n = 6;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| match (i == j, i / 3 == j / 3) {
                        (true, _) => 0.0,
                        (false, true) => 0.1,
                        (false, false) => 0.9,
                    })
                    .collect()
            })
            .collect();
        let dm = DistanceMatrix::from_rows(labels(n), rows, None).unwrap();
        for linkage in [Linkage::Complete, Linkage::Ward] {
            let d = agglomerate(&dm, linkage).unwrap();
            assert_eq!(cut(&d, 2).unwrap().groups, vec![vec![0, 1, 2], vec![3, 4, 5]]);
            assert_eq!(cut(&d, 1).unwrap().groups, vec![(0..n).collect::<Vec<_>>()]);
            assert_eq!(cut(&d, n).unwrap().groups.len(), n);
            assert!(cut(&d, 0).is_err());
            assert!(cut(&d, n + 1).is_err());
        }
    }

    #[test]
    fn leaf_order_and_quoted_newick() {
        let dm = DistanceMatrix::from_rows(
            vec!["a b".into(), "c".into(), "it's".into()],
            vec![vec![0.0, 4.0, 1.0], vec![4.0, 0.0, 5.0], vec![1.0, 5.0, 0.0]],
            None,
        )
        .unwrap();
        let d = agglomerate(&dm, Linkage::Complete).unwrap();
        assert_eq!(d.leaf_order(), vec![1, 0, 2]);
        assert_eq!(d.to_newick(), "(c:5,('a b':1,'it''s':1):4);");
    }

    fn random_matrix(n: usize, values: &[f64]) -> DistanceMatrix {
        let mut rows = vec![vec![0.0; n]; n];
        let mut it = values.iter().cycle();
        for i in 0..n {
            for j in i + 1..n {
                let v = *it.next().unwrap();
                rows[i][j] = v;
                rows[j][i] = v;
            }
        }
        DistanceMatrix::from_rows(labels(n), rows, None).unwrap()
    }

    proptest! {
        #[test]
        fn complete_heights_monotone_and_cuts_nested(
            n in 2usize..10,
            values in proptest::collection::vec(0u8..6, 45),
        ) {
            let vals: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            let dm = random_matrix(n, &vals);
            let d = agglomerate(&dm, Linkage::Complete).unwrap();
            prop_assert_eq!(d.merges.len(), n - 1);
            for w in d.merges.windows(2) {
                prop_assert!(w[0].height <= w[1].height);
            }
            for k in 1..n {
                let coarse = cut(&d, k).unwrap();
                let fine = cut(&d, k + 1).unwrap();
                // Every fine group sits inside one coarse group, and exactly
                // one coarse group is split.
                for g in &fine.groups {
                    let parent = coarse.assignment[g[0]];
                    prop_assert!(g.iter().all(|&x| coarse.assignment[x] == parent));
                }
                prop_assert_eq!(fine.groups.len(), coarse.groups.len() + 1);
            }
        }

        #[test]
        fn relabeling_is_equivariant(
            n in 2usize..8,
            values in proptest::collection::vec(0.0f64..10.0, 28),
            seed in any::<u64>(),
        ) {
            // Continuous random distances have no ties, so a relabeled input
            // gives the same tree with leaves renamed.
            let dm = random_matrix(n, &values);
            let mut perm: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| dm.get(perm[i], perm[j])).collect())
                .collect();
            let permuted_labels: Vec<String> = perm.iter().map(|&p| dm.labels[p].clone()).collect();
            let pm = DistanceMatrix::from_rows(permuted_labels, rows, None).unwrap();
            for linkage in [Linkage::Complete, Linkage::Ward] {
                let a = agglomerate(&dm, linkage).unwrap();
                let b = agglomerate(&pm, linkage).unwrap();
                for k in 1..=n {
                    let mut ga: Vec<Vec<String>> = cut(&a, k).unwrap().groups.iter()
                        .map(|g| { let mut v: Vec<String> = g.iter().map(|&x| a.leaves[x].clone()).collect(); v.sort(); v })
                        .collect();
                    let mut gb: Vec<Vec<String>> = cut(&b, k).unwrap().groups.iter()
                        .map(|g| { let mut v: Vec<String> = g.iter().map(|&x| b.leaves[x].clone()).collect(); v.sort(); v })
                        .collect();
                    ga.sort();
                    gb.sort();
                    prop_assert_eq!(ga, gb);
                }
                for (x, y) in a.merges.iter().zip(&b.merges) {
                    prop_assert!((x.height - y.height).abs() < 1e-9);
                }
            }
        }
    }
}
