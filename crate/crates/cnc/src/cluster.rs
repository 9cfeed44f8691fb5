//! Label clustering from affinity statistics.
//!
//! Two strategies: pick each row's best off-diagonal partner and merge when
//! it clears a threshold (the default), or single-linkage agglomeration on
//! L1 row distance. Merge pairs close under union-find, clusters are
//! numbered by ascending smallest member, and a brute-force oracle recomputes
//! small instances by exhaustive enumeration for verification.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::affinity::AffinityMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterStrategy {
    ThresholdArgmax,
    L1Agglomerative,
}

/// Clustering parameters.
///
/// `trsd = None` resolves to `2 / C` (twice uniform mass) at call time.
/// `link_all_above` switches the threshold rule from "best partner only"
/// to "every partner above the threshold".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterRule {
    pub strategy: ClusterStrategy,
    pub trsd: Option<f64>,
    pub tau: f64,
    pub min_cluster_size: usize,
    pub link_all_above: bool,
}

impl Default for ClusterRule {
    fn default() -> Self {
        ClusterRule {
            strategy: ClusterStrategy::ThresholdArgmax,
            trsd: None,
            tau: 1.0,
            min_cluster_size: 1,
            link_all_above: false,
        }
    }
}

impl ClusterRule {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.trsd {
            if !(0.0 < t && t < 1.0) {
                return Err(Error::Config(format!("trsd must lie in (0,1), got {t}")));
            }
        }
        if !(0.0 < self.tau && self.tau <= 2.0) {
            return Err(Error::Config(format!("tau must lie in (0,2], got {}", self.tau)));
        }
        if self.min_cluster_size < 1 {
            return Err(Error::Config("min_cluster_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolve_trsd(&self, num_labels: usize) -> Result<f64> {
        let t = self.trsd.unwrap_or(2.0 / num_labels as f64);
        if !(0.0 < t && t < 1.0) {
            return Err(Error::Config(format!(
                "resolved trsd {t} is outside (0,1); set trsd explicitly for {num_labels} labels"
            )));
        }
        Ok(t)
    }
}

/// A partition of `num_labels` labels into clusters. Cluster ids run
/// `0..K` in order of each cluster's smallest member; members are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    num_labels: usize,
    assign: Vec<usize>,
    members: Vec<Vec<usize>>,
}

/// Binary membership vector for one cluster over the original labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMask {
    pub cluster: usize,
    pub bits: Vec<bool>,
}

impl ClusterMask {
    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

impl Clustering {
    /// Canonicalizes an arbitrary label-to-group map: groups are renumbered
    /// by ascending smallest member.
    pub fn from_assignment(raw: &[usize]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Empty("clustering over zero labels".into()));
        }
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new(); // (raw id, members)
        for (label, &g) in raw.iter().enumerate() {
            match groups.iter_mut().find(|(id, _)| *id == g) {
                Some((_, members)) => members.push(label),
                None => groups.push((g, vec![label])),
            }
        }
        groups.sort_by_key(|(_, members)| members[0]);
        let mut assign = vec![0usize; raw.len()];
        let mut members = Vec::with_capacity(groups.len());
        for (cluster, (_, group)) in groups.into_iter().enumerate() {
            for &label in &group {
                assign[label] = cluster;
            }
            members.push(group);
        }
        let c = Clustering {
            num_labels: raw.len(),
            assign,
            members,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn identity(num_labels: usize) -> Self {
        Clustering {
            num_labels,
            assign: (0..num_labels).collect(),
            members: (0..num_labels).map(|l| vec![l]).collect(),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn assign(&self) -> &[usize] {
        &self.assign
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn cluster_of(&self, label: usize) -> usize {
        self.assign[label]
    }

    /// True when no labels were merged.
    pub fn is_identity(&self) -> bool {
        self.num_clusters() == self.num_labels
    }

    /// Partition sanity: total, disjoint, covering, nonempty, canonical ids.
    pub fn validate(&self) -> Result<()> {
        if self.assign.len() != self.num_labels {
            return Err(Error::Input("assignment length mismatch".into()));
        }
        let k = self.members.len();
        if k == 0 {
            return Err(Error::Empty("clustering has no clusters".into()));
        }
        let mut seen = vec![false; self.num_labels];
        let mut last_smallest = None;
        for (cluster, group) in self.members.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::Input(format!("cluster {cluster} is empty")));
            }
            if group.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Input(format!("cluster {cluster} members not sorted")));
            }
            if let Some(prev) = last_smallest {
                if group[0] <= prev {
                    return Err(Error::Input("cluster ids not ordered by smallest member".into()));
                }
            }
            last_smallest = Some(group[0]);
            for &label in group {
                if label >= self.num_labels {
                    return Err(Error::Label(format!("member {label} out of range")));
                }
                if seen[label] {
                    return Err(Error::Input(format!("label {label} in two clusters")));
                }
                seen[label] = true;
                if self.assign[label] != cluster {
                    return Err(Error::Input(format!(
                        "assign[{label}] disagrees with membership"
                    )));
                }
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Input("partition does not cover all labels".into()));
        }
        Ok(())
    }

    /// One mask per cluster; together they partition the label set.
    pub fn masks(&self) -> Vec<ClusterMask> {
        self.members
            .iter()
            .enumerate()
            .map(|(cluster, group)| {
                let mut bits = vec![false; self.num_labels];
                for &label in group {
                    bits[label] = true;
                }
                ClusterMask { cluster, bits }
            })
            .collect()
    }

    /// Replaces each label with its cluster id.
    pub fn relabel(&self, labels: &[usize]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|&l| {
                if l >= self.num_labels {
                    Err(Error::Label(format!(
                        "label {l} out of range for {} labels",
                        self.num_labels
                    )))
                } else {
                    Ok(self.assign[l])
                }
            })
            .collect()
    }

    /// Text format, bit-exact:
    /// line 1 `cnc-clustering v1`, line 2 `C K`, then C lines `label cluster`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("cnc-clustering v1\n");
        let _ = writeln!(out, "{} {}", self.num_labels, self.num_clusters());
        for (label, &cluster) in self.assign.iter().enumerate() {
            let _ = writeln!(out, "{label} {cluster}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if header != "cnc-clustering v1" {
            return Err(Error::parse("line 1", format!("bad header `{header}`")));
        }
        let dims = lines
            .next()
            .ok_or_else(|| Error::parse("line 2", "missing dimensions"))?;
        let mut it = dims.split_whitespace();
        let c: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse("line 2", "bad label count"))?;
        let k: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse("line 2", "bad cluster count"))?;
        let mut assign = vec![usize::MAX; c];
        for i in 0..c {
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(format!("line {}", i + 3), "missing assignment"))?;
            let mut parts = line.split_whitespace();
            let label: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(format!("line {}", i + 3), "bad label"))?;
            let cluster: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(format!("line {}", i + 3), "bad cluster"))?;
            if label >= c || cluster >= k {
                return Err(Error::parse(
                    format!("line {}", i + 3),
                    "label or cluster out of range",
                ));
            }
            assign[label] = cluster;
        }
        if assign.iter().any(|&a| a == usize::MAX) {
            return Err(Error::parse("body", "not every label assigned"));
        }
        let clustering = Clustering::from_assignment(&assign)?;
        if clustering.num_clusters() != k {
            return Err(Error::parse(
                "body",
                format!("header claims {k} clusters, body has {}", clustering.num_clusters()),
            ));
        }
        // from_assignment canonicalizes; the stored file must already be
        // canonical for the round trip to be bit-exact.
        if clustering.assign() != assign {
            return Err(Error::parse("body", "cluster ids are not canonical"));
        }
        Ok(clustering)
    }
}

/// Ordered stack of clusterings: level t partitions the cluster ids of
/// level t-1; level 0 partitions the original labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hierarchy {
    levels: Vec<Clustering>,
}

impl Hierarchy {
    pub fn new() -> Self {
        Hierarchy { levels: Vec::new() }
    }

    pub fn from_levels(levels: Vec<Clustering>) -> Result<Self> {
        let h = Hierarchy { levels };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        for (t, level) in self.levels.iter().enumerate() {
            level.validate()?;
            if t > 0 && level.num_labels() != self.levels[t - 1].num_clusters() {
                return Err(Error::Input(format!(
                    "level {t} partitions {} ids but level {} produced {}",
                    level.num_labels(),
                    t - 1,
                    self.levels[t - 1].num_clusters()
                )));
            }
        }
        Ok(())
    }

    pub fn push(&mut self, level: Clustering) -> Result<()> {
        if let Some(prev) = self.levels.last() {
            if level.num_labels() != prev.num_clusters() {
                return Err(Error::Input(format!(
                    "new level partitions {} ids, previous level produced {}",
                    level.num_labels(),
                    prev.num_clusters()
                )));
            }
        }
        level.validate()?;
        self.levels.push(level);
        Ok(())
    }

    pub fn levels(&self) -> &[Clustering] {
        &self.levels
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Composes levels 0..=t into one map from original labels to the
    /// cluster ids of level t.
    pub fn flatten_to_level(&self, t: usize) -> Result<Clustering> {
        if t >= self.levels.len() {
            return Err(Error::Input(format!(
                "level {t} out of range for {} levels",
                self.levels.len()
            )));
        }
        let mut assign: Vec<usize> = self.levels[0].assign().to_vec();
        for level in &self.levels[1..=t] {
            for a in assign.iter_mut() {
                *a = level.cluster_of(*a);
            }
        }
        Clustering::from_assignment(&assign)
    }

    /// Levels concatenated in the clustering text format, separated by `---`.
    pub fn to_text(&self) -> String {
        self.levels
            .iter()
            .map(Clustering::to_text)
            .collect::<Vec<_>>()
            .join("---\n")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut levels = Vec::new();
        for chunk in text.split("---\n") {
            if chunk.trim().is_empty() {
                continue;
            }
            levels.push(Clustering::from_text(chunk)?);
        }
        Hierarchy::from_levels(levels)
    }
}

impl Default for Hierarchy {
    fn default() -> Self {
        Hierarchy::new()
    }
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }

    fn assignment(&mut self) -> Vec<usize> {
        (0..self.parent.len()).map(|x| self.find(x)).collect()
    }
}

/// Best off-diagonal partner of `row`, skipping empty rows; ties break to
/// the smallest index.
fn argmax_partner(a: &AffinityMatrix, row: usize) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..a.size() {
        if i == row || a.is_empty_row(i) {
            continue;
        }
        let v = a.mass().get(row, i);
        if best.map_or(true, |(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    best
}

/// The merge pairs the threshold rule records, before closure. Shared by
/// the fast path and the brute-force oracle so only the closure differs.
fn threshold_pairs(a: &AffinityMatrix, trsd: f64, link_all_above: bool) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for l in 0..a.size() {
        if a.is_empty_row(l) {
            continue;
        }
        if link_all_above {
            for i in 0..a.size() {
                if i != l && !a.is_empty_row(i) && a.mass().get(l, i) > trsd {
                    pairs.push((l, i));
                }
            }
        } else if let Some((partner, v)) = argmax_partner(a, l) {
            if v > trsd {
                pairs.push((l, partner));
            }
        }
    }
    pairs
}

fn finish(assign: Vec<usize>, a: &AffinityMatrix, rule: &ClusterRule) -> Result<Clustering> {
    let clustering = Clustering::from_assignment(&assign)?;
    if rule.min_cluster_size > 1 {
        merge_undersized(clustering, a, rule.min_cluster_size)
    } else {
        Ok(clustering)
    }
}

/// Folds clusters below the minimum size into the cluster holding their
/// strongest cross-affinity partner. Empty-row labels stay singletons.
fn merge_undersized(
    mut clustering: Clustering,
    a: &AffinityMatrix,
    min_size: usize,
) -> Result<Clustering> {
    loop {
        let undersized = clustering
            .members()
            .iter()
            .position(|g| g.len() < min_size && g.iter().any(|&l| !a.is_empty_row(l)));
        let Some(small) = undersized else {
            return Ok(clustering);
        };
        if clustering.num_clusters() == 1 {
            return Ok(clustering);
        }
        let mut best: Option<(usize, f64)> = None; // (other cluster, affinity)
        for (other, group) in clustering.members().iter().enumerate() {
            if other == small {
                continue;
            }
            let mut strongest = f64::NEG_INFINITY;
            for &p in &clustering.members()[small] {
                for &q in group {
                    if a.is_empty_row(p) || a.is_empty_row(q) {
                        continue;
                    }
                    strongest = strongest.max(a.mass().get(p, q)).max(a.mass().get(q, p));
                }
            }
            if best.map_or(true, |(_, bv)| strongest > bv) {
                best = Some((other, strongest));
            }
        }
        let (target, _) = best.expect("at least two clusters");
        let mut assign = clustering.assign().to_vec();
        let from = small.min(target);
        for l in 0..assign.len() {
            if assign[l] == small {
                assign[l] = from;
            } else if assign[l] == target {
                assign[l] = from;
            }
        }
        clustering = Clustering::from_assignment(&assign)?;
    }
}

fn check_no_unresolved_empties(a: &AffinityMatrix) -> Result<()> {
    // Empty rows are legal; they just stay singletons. Nothing to resolve
    // here beyond validating the matrix itself.
    a.validate()
}

/// Threshold/argmax clustering: each label proposes its best off-diagonal
/// partner when the mass clears `trsd`; proposals close under union-find.
pub fn cluster_threshold_argmax(a: &AffinityMatrix, rule: &ClusterRule) -> Result<Clustering> {
    rule.validate()?;
    check_no_unresolved_empties(a)?;
    let trsd = rule.resolve_trsd(a.size())?;
    let mut uf = UnionFind::new(a.size());
    for (l, partner) in threshold_pairs(a, trsd, rule.link_all_above) {
        uf.union(l, partner);
    }
    finish(uf.assignment(), a, rule)
}

/// Single-linkage agglomeration on L1 row distance: repeatedly merge the
/// two clusters whose closest member pair is nearest, while that distance
/// stays below `tau`. Ties break to the smallest (label, label) pair.
pub fn cluster_l1(a: &AffinityMatrix, rule: &ClusterRule) -> Result<Clustering> {
    rule.validate()?;
    check_no_unresolved_empties(a)?;
    let c = a.size();
    let tau = rule.tau;

    let mut dist = vec![f64::INFINITY; c * c];
    for p in 0..c {
        for q in (p + 1)..c {
            if a.is_empty_row(p) || a.is_empty_row(q) {
                continue;
            }
            let d = a.row_l1(p, q)?;
            dist[p * c + q] = d;
            dist[q * c + p] = d;
        }
    }

    let mut clusters: Vec<Vec<usize>> = (0..c).map(|l| vec![l]).collect();
    loop {
        // (distance, label pair, cluster pair) of the best merge.
        let mut best: Option<(f64, (usize, usize), (usize, usize))> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let mut link: Option<(f64, (usize, usize))> = None;
                for &p in &clusters[i] {
                    for &q in &clusters[j] {
                        let d = dist[p * c + q];
                        if d.is_infinite() {
                            continue;
                        }
                        let pair = (p.min(q), p.max(q));
                        let better = match link {
                            None => true,
                            Some((ld, lp)) => d < ld || (d == ld && pair < lp),
                        };
                        if better {
                            link = Some((d, pair));
                        }
                    }
                }
                if let Some((d, pair)) = link {
                    let better = match best {
                        None => true,
                        Some((bd, bp, _)) => d < bd || (d == bd && pair < bp),
                    };
                    if better {
                        best = Some((d, pair, (i, j)));
                    }
                }
            }
        }
        match best {
            Some((d, _, (i, j))) if d < tau => {
                let absorbed = clusters.remove(j);
                clusters[i].extend(absorbed);
                clusters[i].sort_unstable();
            }
            _ => break,
        }
    }

    let mut assign = vec![0usize; c];
    for (id, group) in clusters.iter().enumerate() {
        for &l in group {
            assign[l] = id;
        }
    }
    finish(assign, a, rule)
}

/// Dispatch on the configured strategy.
pub fn cluster(a: &AffinityMatrix, rule: &ClusterRule) -> Result<Clustering> {
    match rule.strategy {
        ClusterStrategy::ThresholdArgmax => cluster_threshold_argmax(a, rule),
        ClusterStrategy::L1Agglomerative => cluster_l1(a, rule),
    }
}

/// Verification oracle: recomputes the merge relation by exhaustive pair
/// enumeration and repeated transitive-closure passes until fixpoint.
/// Restricted to C <= 12; intended for tests.
pub fn brute_force_partition(a: &AffinityMatrix, rule: &ClusterRule) -> Result<Clustering> {
    rule.validate()?;
    check_no_unresolved_empties(a)?;
    let c = a.size();
    if c > 12 {
        return Err(Error::Size(format!("brute force supports C <= 12, got {c}")));
    }
    if rule.min_cluster_size != 1 {
        return Err(Error::Config(
            "brute force oracle only covers min_cluster_size = 1".into(),
        ));
    }

    let mut related = vec![false; c * c];
    for l in 0..c {
        related[l * c + l] = true;
    }
    match rule.strategy {
        ClusterStrategy::ThresholdArgmax => {
            let trsd = rule.resolve_trsd(c)?;
            // Exhaustive pair test, independent of the fast path: (l, i) is
            // a merge pair iff mass[l][i] clears trsd and i beats every other
            // candidate j (strictly for j < i, weakly for j > i, matching
            // the smallest-index tie rule), or clears trsd at all in
            // link-all-above mode.
            for l in 0..c {
                if a.is_empty_row(l) {
                    continue;
                }
                for i in 0..c {
                    if i == l || a.is_empty_row(i) {
                        continue;
                    }
                    let v = a.mass().get(l, i);
                    if v <= trsd {
                        continue;
                    }
                    let is_pair = rule.link_all_above
                        || (0..c)
                            .filter(|&j| j != l && j != i && !a.is_empty_row(j))
                            .all(|j| {
                                let w = a.mass().get(l, j);
                                if j < i {
                                    v > w
                                } else {
                                    v >= w
                                }
                            });
                    if is_pair {
                        related[l * c + i] = true;
                        related[i * c + l] = true;
                    }
                }
            }
        }
        ClusterStrategy::L1Agglomerative => {
            for p in 0..c {
                for q in (p + 1)..c {
                    if a.is_empty_row(p) || a.is_empty_row(q) {
                        continue;
                    }
                    if a.row_l1(p, q)? < rule.tau {
                        related[p * c + q] = true;
                        related[q * c + p] = true;
                    }
                }
            }
        }
    }

    // Transitive closure by repeated passes until nothing changes.
    loop {
        let mut changed = false;
        for l in 0..c {
            for i in 0..c {
                if !related[l * c + i] {
                    continue;
                }
                for j in 0..c {
                    if related[i * c + j] && !related[l * c + j] {
                        related[l * c + j] = true;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut assign = vec![usize::MAX; c];
    for l in 0..c {
        if assign[l] != usize::MAX {
            continue;
        }
        for i in 0..c {
            if related[l * c + i] {
                assign[i] = l;
            }
        }
    }
    Clustering::from_assignment(&assign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn affinity_from_rows(rows: &[Vec<f64>]) -> AffinityMatrix {
        let counts = vec![1; rows.len()];
        AffinityMatrix::from_parts(Matrix::from_rows(rows).unwrap(), counts).unwrap()
    }

    /// Row-stochastic matrix with heavy diagonal plus planted pair mass.
    fn fig4_style_affinity() -> AffinityMatrix {
        let c = 10;
        let pairs = [(1, 2), (2, 3), (5, 8), (8, 9)];
        let mut rows = vec![vec![0.0; c]; c];
        for (l, row) in rows.iter_mut().enumerate() {
            row[l] = 1.0;
        }
        for &(l, i) in &pairs {
            // Push 0.4 of l's mass onto i, making i the clear argmax of row l.
            rows[l][l] -= 0.4;
            rows[l][i] += 0.4;
        }
        affinity_from_rows(&rows)
    }

    fn rule_with_trsd(t: f64) -> ClusterRule {
        ClusterRule {
            trsd: Some(t),
            ..ClusterRule::default()
        }
    }

    #[test]
    fn planted_pairs_close_into_two_groups() {
        let a = fig4_style_affinity();
        let c = cluster_threshold_argmax(&a, &rule_with_trsd(0.2)).unwrap();
        // {1,2,3} and {5,8,9} merge, everything else stays singleton.
        assert_eq!(c.num_clusters(), 6);
        assert_eq!(c.members()[1], vec![1, 2, 3]);
        assert_eq!(c.members()[3], vec![5, 8, 9]);
        assert_eq!(c.cluster_of(0), 0);
        assert_eq!(c.cluster_of(4), 2);
    }

    #[test]
    fn identity_affinity_gives_singletons() {
        let a = affinity_from_rows(&(0..6).map(|l| {
            let mut r = vec![0.0; 6];
            r[l] = 1.0;
            r
        }).collect::<Vec<_>>());
        let c = cluster_threshold_argmax(&a, &rule_with_trsd(0.1)).unwrap();
        assert!(c.is_identity());
        assert_eq!(c.num_clusters(), 6);
    }

    #[test]
    fn masks_partition_the_label_set() {
        let a = fig4_style_affinity();
        let c = cluster_threshold_argmax(&a, &rule_with_trsd(0.2)).unwrap();
        let masks = c.masks();
        let pops: Vec<usize> = masks.iter().map(ClusterMask::popcount).collect();
        assert_eq!(pops, vec![1, 3, 1, 3, 1, 1]);
        // Elementwise sum of all masks is the all-ones vector.
        for label in 0..10 {
            let owners = masks.iter().filter(|m| m.bits[label]).count();
            assert_eq!(owners, 1);
        }
    }

    #[test]
    fn single_cluster_mask_is_all_ones() {
        let c = Clustering::from_assignment(&[0, 0, 0]).unwrap();
        let masks = c.masks();
        assert_eq!(masks.len(), 1);
        assert!(masks[0].bits.iter().all(|&b| b));
    }

    #[test]
    fn singleton_masks_are_one_hot() {
        let c = Clustering::identity(4);
        let masks = c.masks();
        assert_eq!(masks.len(), 4);
        for (i, m) in masks.iter().enumerate() {
            assert_eq!(m.popcount(), 1);
            assert!(m.bits[i]);
        }
    }

    #[test]
    fn relabel_maps_through_assignment() {
        let a = fig4_style_affinity();
        let c = cluster_threshold_argmax(&a, &rule_with_trsd(0.2)).unwrap();
        // Canonical ids: {0}=0, {1,2,3}=1, {4}=2, {5,8,9}=3, {6}=4, {7}=5.
        assert_eq!(c.relabel(&[1, 5, 3, 9]).unwrap(), vec![1, 3, 1, 3]);
        assert_eq!(c.relabel(&[0, 4, 6, 7]).unwrap(), vec![0, 2, 4, 5]);
        // The two merged groups land in distinct shared clusters.
        assert_eq!(c.cluster_of(1), c.cluster_of(2));
        assert_eq!(c.cluster_of(5), c.cluster_of(9));
        assert_ne!(c.cluster_of(1), c.cluster_of(5));
    }

    #[test]
    fn relabel_identity_and_single_cluster() {
        let id = Clustering::identity(5);
        assert_eq!(id.relabel(&[3, 1, 4]).unwrap(), vec![3, 1, 4]);
        let one = Clustering::from_assignment(&[0; 5]).unwrap();
        assert_eq!(one.relabel(&[3, 1, 4]).unwrap(), vec![0, 0, 0]);
        assert!(matches!(id.relabel(&[5]), Err(Error::Label(_))));
    }

    fn random_row_stochastic(rng: &mut ChaCha8Rng, c: usize) -> AffinityMatrix {
        let rows: Vec<Vec<f64>> = (0..c)
            .map(|_| {
                let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        affinity_from_rows(&rows)
    }

    #[test]
    fn threshold_argmax_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..120 {
            let c = rng.gen_range(6..=10);
            let a = random_row_stochastic(&mut rng, c);
            let trsd = rng.gen_range(0.05..0.6);
            for link_all in [false, true] {
                let rule = ClusterRule {
                    trsd: Some(trsd),
                    link_all_above: link_all,
                    ..ClusterRule::default()
                };
                let fast = cluster_threshold_argmax(&a, &rule).unwrap();
                let oracle = brute_force_partition(&a, &rule).unwrap();
                assert_eq!(fast, oracle, "trial {trial} trsd {trsd} link_all {link_all}");
            }
        }
    }

    #[test]
    fn l1_merges_identical_rows_for_any_positive_tau() {
        let a = affinity_from_rows(&[
            vec![0.5, 0.3, 0.2],
            vec![0.5, 0.3, 0.2],
            vec![0.0, 0.0, 1.0],
        ]);
        let rule = ClusterRule {
            strategy: ClusterStrategy::L1Agglomerative,
            tau: 1e-9,
            ..ClusterRule::default()
        };
        let c = cluster_l1(&a, &rule).unwrap();
        assert_eq!(c.cluster_of(0), c.cluster_of(1));
        assert_ne!(c.cluster_of(0), c.cluster_of(2));
    }

    #[test]
    fn l1_keeps_mutually_one_hot_rows_apart() {
        let a = affinity_from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let rule = ClusterRule {
            strategy: ClusterStrategy::L1Agglomerative,
            tau: 1.5,
            ..ClusterRule::default()
        };
        let c = cluster_l1(&a, &rule).unwrap();
        assert!(c.is_identity());
    }

    #[test]
    fn l1_matches_component_oracle_on_seeded_fixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        for _ in 0..60 {
            let a = random_row_stochastic(&mut rng, 8);
            let rule = ClusterRule {
                strategy: ClusterStrategy::L1Agglomerative,
                tau: rng.gen_range(0.05..1.2),
                ..ClusterRule::default()
            };
            let fast = cluster_l1(&a, &rule).unwrap();
            let oracle = brute_force_partition(&a, &rule).unwrap();
            assert_eq!(fast, oracle);
        }
    }

    #[test]
    fn brute_force_uniform_matrix_merges_everything() {
        let c = 5;
        let a = affinity_from_rows(&vec![vec![1.0 / c as f64; c]; c]);
        let rule = rule_with_trsd(0.1); // below 1/C = 0.2
        let clustering = brute_force_partition(&a, &rule).unwrap();
        assert_eq!(clustering.num_clusters(), 1);
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        let a = affinity_from_rows(&(0..13).map(|l| {
            let mut r = vec![0.0; 13];
            r[l] = 1.0;
            r
        }).collect::<Vec<_>>());
        assert!(matches!(
            brute_force_partition(&a, &ClusterRule::default()),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn raising_trsd_never_creates_new_merges() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..40 {
            let a = random_row_stochastic(&mut rng, 8);
            let lo = cluster_threshold_argmax(&a, &rule_with_trsd(0.1)).unwrap();
            let hi = cluster_threshold_argmax(&a, &rule_with_trsd(0.3)).unwrap();
            // Any pair separated at low trsd stays separated at high trsd.
            for p in 0..8 {
                for q in 0..8 {
                    if lo.cluster_of(p) != lo.cluster_of(q) {
                        assert_ne!(hi.cluster_of(p), hi.cluster_of(q));
                    }
                }
            }
        }
    }

    #[test]
    fn clustering_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let c = 7;
        let a = random_row_stochastic(&mut rng, c);
        let rule = rule_with_trsd(0.18);
        let base = cluster_threshold_argmax(&a, &rule).unwrap();

        let perm = [4usize, 2, 6, 0, 1, 5, 3];
        let mut rows = vec![vec![0.0; c]; c];
        for p in 0..c {
            for q in 0..c {
                rows[perm[p]][perm[q]] = a.mass().get(p, q);
            }
        }
        let permuted = affinity_from_rows(&rows);
        let got = cluster_threshold_argmax(&permuted, &rule).unwrap();

        for p in 0..c {
            for q in 0..c {
                assert_eq!(
                    base.cluster_of(p) == base.cluster_of(q),
                    got.cluster_of(perm[p]) == got.cluster_of(perm[q])
                );
            }
        }
    }

    #[test]
    fn empty_rows_stay_singletons() {
        let mut rows = vec![
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.1, 0.8, 0.0, 0.1],
        ];
        // Row 3 points at label 1 hard; row 2 is empty.
        rows[3] = vec![0.1, 0.8, 0.0, 0.1];
        let a = AffinityMatrix::from_parts(Matrix::from_rows(&rows).unwrap(), vec![1, 1, 0, 1])
            .unwrap();
        let c = cluster_threshold_argmax(&a, &rule_with_trsd(0.3)).unwrap();
        // Label 2 is its own cluster despite column traffic elsewhere.
        assert_eq!(c.members().iter().find(|g| g.contains(&2)).unwrap(), &vec![2]);
        assert_eq!(c.cluster_of(0), c.cluster_of(1));
        assert_eq!(c.cluster_of(1), c.cluster_of(3));
    }

    #[test]
    fn min_cluster_size_folds_small_clusters() {
        let a = fig4_style_affinity();
        let rule = ClusterRule {
            trsd: Some(0.2),
            min_cluster_size: 2,
            ..ClusterRule::default()
        };
        let c = cluster_threshold_argmax(&a, &rule).unwrap();
        assert!(c.members().iter().all(|g| g.len() >= 2 || c.num_clusters() == 1));
    }

    #[test]
    fn text_format_round_trips() {
        let a = fig4_style_affinity();
        let c = cluster_threshold_argmax(&a, &rule_with_trsd(0.2)).unwrap();
        let text = c.to_text();
        assert!(text.starts_with("cnc-clustering v1\n10 6\n"));
        let parsed = Clustering::from_text(&text).unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn hierarchy_flattens_and_round_trips() {
        let level0 = Clustering::from_assignment(&[0, 0, 1, 1, 2, 2]).unwrap();
        let level1 = Clustering::from_assignment(&[0, 0, 1]).unwrap();
        let mut h = Hierarchy::new();
        h.push(level0).unwrap();
        h.push(level1).unwrap();

        let flat = h.flatten_to_level(1).unwrap();
        assert_eq!(flat.assign(), &[0, 0, 0, 0, 1, 1]);

        let parsed = Hierarchy::from_text(&h.to_text()).unwrap();
        assert_eq!(parsed, h);
    }

    #[test]
    fn hierarchy_rejects_mismatched_levels() {
        let level0 = Clustering::from_assignment(&[0, 0, 1, 1]).unwrap();
        let level1 = Clustering::from_assignment(&[0, 1, 1]).unwrap(); // 3 ids, level0 made 2
        let mut h = Hierarchy::new();
        h.push(level0).unwrap();
        assert!(h.push(level1).is_err());
    }

    #[test]
    fn rule_validation_rejects_out_of_range_params() {
        let mut r = ClusterRule::default();
        r.trsd = Some(1.0);
        assert!(r.validate().is_err());
        r.trsd = Some(0.5);
        r.tau = 2.5;
        assert!(r.validate().is_err());
        r.tau = 1.0;
        r.min_cluster_size = 0;
        assert!(r.validate().is_err());
    }
}
