//! Reason clustering, the action-retention funnel and crowd-reason admission.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, ActionEntry, ReasonEntry, ReasonSource, ReasonTaxonomy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonVector {
    pub id: String,
    pub vector: Vec<f64>,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(dot(a, b) / denom)
}

pub fn normalized(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VectorLine {
    text: String,
    vector: Vec<f64>,
}

/// Embeddings keyed by exact text, read from `{"text", "vector"}` JSON lines.
#[derive(Debug, Clone, Default)]
pub struct VectorStore {
    vectors: HashMap<String, Vec<f64>>,
    dim: Option<usize>,
}

impl VectorStore {
    pub fn from_file(path: &Path) -> Result<Self> {
        let lines: Vec<(usize, VectorLine)> = read_jsonl(path)?;
        let mut store = VectorStore::default();
        for (_, l) in lines {
            store.insert(l.text, l.vector)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        match self.dim {
            Some(d) if d != vector.len() => return Err(Error::DimensionMismatch { expected: d, got: vector.len() }),
            _ => self.dim = Some(vector.len()),
        }
        self.vectors.insert(text.into(), vector);
        Ok(())
    }

    pub fn get(&self, text: &str) -> Result<&[f64]> {
        self.vectors.get(text).map(Vec::as_slice).ok_or_else(|| Error::MissingEmbedding(text.to_string()))
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Cluster ids; leaves are `0..n`, the k-th merge creates cluster `n + k`.
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTree {
    /// Leaf labels in leaf-id order (sorted reason ids).
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
}

/// Builds the Ward agglomerative tree.
///
/// Inputs are sorted by id so leaf ids follow id order. Squared Euclidean
/// dissimilarities are updated with the Lance–Williams Ward recurrence and the
/// reported merge distance is the square root, which equals
/// `sqrt(2 * |A||B| / (|A|+|B|) * ||c_A - c_B||^2)`. Among equal candidates the
/// smallest `(a, b)` cluster-id pair merges first.
pub fn ward_tree(vectors: &[ReasonVector]) -> Result<ClusterTree> {
    if vectors.is_empty() {
        return Err(Error::invalid("ward clustering needs at least one vector"));
    }
    let dim = vectors[0].vector.len();
    if let Some(v) = vectors.iter().find(|v| v.vector.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: v.vector.len() });
    }
    let mut sorted: Vec<&ReasonVector> = vectors.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let n = sorted.len();
    let total = 2 * n - 1;
    let mut d2 = vec![vec![0.0f64; total]; total];
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = sorted[i].vector.iter().zip(&sorted[j].vector).map(|(x, y)| (x - y) * (x - y)).sum();
            d2[i][j] = d;
            d2[j][i] = d;
        }
    }
    let mut size = vec![0usize; total];
    size[..n].fill(1);
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize)> = None;
        for (x, &a) in active.iter().enumerate() {
            for &b in &active[x + 1..] {
                let d = d2[a][b];
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let (d, a, b) = best.expect("at least two active clusters");
        let new = n + step;
        let (na, nb) = (size[a] as f64, size[b] as f64);
        active.retain(|&c| c != a && c != b);
        for &k in &active {
            let nk = size[k] as f64;
            let v = ((na + nk) * d2[a][k] + (nb + nk) * d2[b][k] - nk * d) / (na + nb + nk);
            d2[new][k] = v;
            d2[k][new] = v;
        }
        size[new] = size[a] + size[b];
        active.push(new);
        merges.push(Merge { a, b, distance: d.max(0.0).sqrt(), size: size[new] });
    }
    Ok(ClusterTree { leaves: sorted.iter().map(|v| v.id.clone()).collect(), merges })
}

impl ClusterTree {
    /// Flat clusters obtained by applying every merge with distance <= `cut`.
    /// Members are sorted; clusters are ordered by their first member.
    pub fn cut(&self, cut: f64) -> Vec<Vec<String>> {
        let n = self.leaves.len();
        let mut parent: Vec<usize> = (0..2 * n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (k, m) in self.merges.iter().enumerate() {
            if m.distance <= cut {
                let new = n + k;
                let ra = find(&mut parent, m.a);
                let rb = find(&mut parent, m.b);
                parent[ra] = new;
                parent[rb] = new;
            }
        }
        let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(self.leaves[i].clone());
        }
        let mut out: Vec<Vec<String>> = groups.into_values().collect();
        for g in &mut out {
            g.sort();
        }
        out.sort();
        out
    }
}

/// Ward clustering cut at `cut`.
pub fn ward_cluster(vectors: &[ReasonVector], cut: f64) -> Result<Vec<Vec<String>>> {
    if cut.is_nan() || cut < 0.0 {
        return Err(Error::invalid(format!("cluster cut must be >= 0, got {cut}")));
    }
    Ok(ward_tree(vectors)?.cut(cut))
}

/// Medoid of each cluster: the member with the highest mean cosine to the
/// other members, ties to the smaller id.
pub fn propose_representatives(partition: &[Vec<String>], vectors: &[ReasonVector]) -> Result<Vec<String>> {
    let by_id: HashMap<&str, &[f64]> = vectors.iter().map(|v| (v.id.as_str(), v.vector.as_slice())).collect();
    let mut out = Vec::with_capacity(partition.len());
    for cluster in partition {
        let mut members: Vec<&String> = cluster.iter().collect();
        members.sort();
        let mut best: Option<(f64, &String)> = None;
        for &m in &members {
            let vm = by_id.get(m.as_str()).ok_or_else(|| Error::MissingEmbedding(m.clone()))?;
            let mut sum = 0.0;
            for &o in &members {
                if o != m {
                    let vo = by_id.get(o.as_str()).ok_or_else(|| Error::MissingEmbedding(o.clone()))?;
                    sum += cosine(vm, vo)?;
                }
            }
            let mean = if members.len() > 1 { sum / (members.len() - 1) as f64 } else { 1.0 };
            if best.is_none_or(|(b, _)| mean > b) {
                best = Some((mean, m));
            }
        }
        match best {
            Some((_, id)) => out.push(id.clone()),
            None => return Err(Error::invalid("empty cluster in partition")),
        }
    }
    Ok(out)
}

pub fn slug(label: &str) -> String {
    let mut s = String::new();
    for w in label.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        if !s.is_empty() {
            s.push('-');
        }
        s.push_str(&w.to_lowercase());
    }
    s
}

pub fn reason_id(action: &str, label: &str) -> String {
    format!("{action}/{}", slug(label))
}

/// Review key for cluster `k` of `action`, as used in review files.
pub fn review_key(action: &str, k: usize) -> String {
    format!("{action}/{k}")
}

/// Editable review file: review key → chosen label.
pub type ReviewFile = BTreeMap<String, String>;

/// Clusters one action's knowledge-graph labels and returns the reviewed
/// reason list plus the default proposal for that action.
pub fn cluster_action_reasons(
    action: &str,
    labels: &[String],
    store: &VectorStore,
    cut: f64,
    review: Option<&ReviewFile>,
) -> Result<(Vec<ReasonEntry>, ReviewFile)> {
    if labels.is_empty() {
        return Ok((Vec::new(), ReviewFile::new()));
    }
    let vectors: Vec<ReasonVector> = labels
        .iter()
        .map(|l| Ok(ReasonVector { id: l.clone(), vector: store.get(l)?.to_vec() }))
        .collect::<Result<_>>()?;
    let partition = ward_cluster(&vectors, cut)?;
    let reps = propose_representatives(&partition, &vectors)?;
    let mut proposal = ReviewFile::new();
    let mut reasons: Vec<ReasonEntry> = Vec::new();
    for (k, rep) in reps.iter().enumerate() {
        let key = review_key(action, k);
        proposal.insert(key.clone(), rep.clone());
        let label = review.and_then(|r| r.get(&key)).unwrap_or(rep).clone();
        if label.is_empty() || reasons.iter().any(|r| r.label == label) {
            continue;
        }
        reasons.push(ReasonEntry { id: reason_id(action, &label), label, source: ReasonSource::KnowledgeGraph });
    }
    Ok((reasons, proposal))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelStage {
    pub name: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelReport {
    pub stages: Vec<FunnelStage>,
    pub removed: BTreeMap<String, String>,
}

/// Removes actions with fewer than `min_reasons` reasons or fewer than
/// `min_clips` clips. Missing clip counts count as zero.
pub fn filter_funnel(
    taxonomy: &ReasonTaxonomy,
    clip_counts: &BTreeMap<String, usize>,
    min_reasons: usize,
    min_clips: usize,
) -> (ReasonTaxonomy, FunnelReport) {
    let mut removed = BTreeMap::new();
    let initial = taxonomy.actions.len();
    let with_reasons = taxonomy.actions.values().filter(|a| !a.reasons.is_empty()).count();
    let enough_reasons: Vec<&String> = taxonomy
        .actions
        .iter()
        .filter(|(name, a)| {
            let ok = a.reasons.len() >= min_reasons;
            if !ok {
                removed.insert(name.to_string(), format!("{} reasons < {}", a.reasons.len(), min_reasons));
            }
            ok
        })
        .map(|(name, _)| name)
        .collect();
    let mut retained = ReasonTaxonomy::default();
    for name in &enough_reasons {
        let count = clip_counts.get(*name).copied().unwrap_or(0);
        if count < min_clips {
            removed.insert(name.to_string(), format!("{count} clips < {min_clips}"));
            continue;
        }
        retained.actions.insert(
            name.to_string(),
            ActionEntry { reasons: taxonomy.actions[*name].reasons.clone(), clip_count: count },
        );
    }
    let stages = vec![
        FunnelStage { name: "initial".into(), count: initial },
        FunnelStage { name: "with reasons".into(), count: with_reasons },
        FunnelStage { name: format!("at least {min_reasons} reasons"), count: enough_reasons.len() },
        FunnelStage { name: format!("at least {min_clips} clips"), count: retained.actions.len() },
    ];
    (retained, FunnelReport { stages, removed })
}

/// Lowercases, trims and collapses internal whitespace.
pub fn normalize_reason_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Admits free-text reasons seen at least `min_count` times whose embedding
/// has cosine below `dup_threshold` with every existing (and previously
/// admitted) reason. Candidates are considered by descending count, then text.
pub fn admit_crowd_reasons(
    action: &str,
    freetexts: &[String],
    existing: &[ReasonEntry],
    min_count: usize,
    dup_threshold: f64,
    store: &VectorStore,
) -> Result<Vec<ReasonEntry>> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in freetexts {
        let n = normalize_reason_text(t);
        if !n.is_empty() {
            *counts.entry(n).or_default() += 1;
        }
    }
    let mut frequent: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    frequent.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut known: Vec<Vec<f64>> =
        existing.iter().map(|r| store.get(&r.label).map(<[f64]>::to_vec)).collect::<Result<_>>()?;
    let mut labels: Vec<&str> = existing.iter().map(|r| r.label.as_str()).collect();
    let mut admitted = Vec::new();
    for (text, _) in &frequent {
        if labels.contains(&text.as_str()) {
            continue;
        }
        let v = store.get(text)?;
        let mut dup = false;
        for k in &known {
            if cosine(v, k)? >= dup_threshold {
                dup = true;
                break;
            }
        }
        if dup {
            continue;
        }
        known.push(v.to_vec());
        labels.push(text);
        admitted.push(ReasonEntry { id: reason_id(action, text), label: text.clone(), source: ReasonSource::Crowd });
    }
    Ok(admitted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(xs: &[f64]) -> Vec<ReasonVector> {
        xs.iter().enumerate().map(|(i, &x)| ReasonVector { id: format!("r{i}"), vector: vec![x] }).collect()
    }

    #[test]
    fn single_vector_is_singleton() {
        let p = ward_cluster(&pts(&[3.0]), 0.0).unwrap();
        assert_eq!(p, vec![vec!["r0".to_string()]]);
    }

    #[test]
    fn one_dimensional_example() {
        let v = pts(&[0.0, 0.1, 10.0]);
        let t = ward_tree(&v).unwrap();
        // First merge {0, 0.1} at 0.1; second at sqrt(2 * 2/3 * 9.95^2).
        assert!((t.merges[0].distance - 0.1).abs() < 1e-12);
        let second = (2.0 * 2.0 / 3.0 * 9.95f64 * 9.95).sqrt();
        assert!((t.merges[1].distance - second).abs() < 1e-9);
        let p = ward_cluster(&v, 5.0).unwrap();
        assert_eq!(p, vec![vec!["r0".to_string(), "r1".into()], vec!["r2".to_string()]]);
        // Among all 2-cluster partitions, {0,0.1}|{10} has the least within-cluster SSE.
        let sse = |g: &[f64]| {
            let m = g.iter().sum::<f64>() / g.len() as f64;
            g.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
        };
        let options =
            [sse(&[0.0, 0.1]) + sse(&[10.0]), sse(&[0.0, 10.0]) + sse(&[0.1]), sse(&[0.1, 10.0]) + sse(&[0.0])];
        assert!(options[0] < options[1] && options[0] < options[2]);
    }

    #[test]
    fn identical_vectors_merge_first_at_zero() {
        let v = vec![
            ReasonVector { id: "a".into(), vector: vec![0.0, 1.0] },
            ReasonVector { id: "b".into(), vector: vec![1.0, 0.0] },
            ReasonVector { id: "c".into(), vector: vec![1.0, 0.0] },
            ReasonVector { id: "d".into(), vector: vec![-1.0, 0.0] },
        ];
        let t = ward_tree(&v).unwrap();
        assert_eq!((t.merges[0].a, t.merges[0].b, t.merges[0].distance), (1, 2, 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let v = vec![
            ReasonVector { id: "a".into(), vector: vec![0.0, 1.0] },
            ReasonVector { id: "b".into(), vector: vec![1.0] },
        ];
        assert!(matches!(ward_tree(&v), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn representatives() {
        let v = vec![
            ReasonVector { id: "x".into(), vector: vec![1.0, 0.0] },
            ReasonVector { id: "y".into(), vector: vec![0.0, 1.0] },
            ReasonVector { id: "m".into(), vector: normalized(&[1.0, 1.0]) },
            ReasonVector { id: "s".into(), vector: vec![1.0, 0.0] },
        ];
        let part = vec![vec!["m".to_string(), "x".into(), "y".into()], vec!["s".to_string()]];
        // Mean cosines: m -> 0.7071, x -> (0 + 0.7071)/2, y -> same.
        assert_eq!(propose_representatives(&part, &v).unwrap(), vec!["m", "s"]);
        let pair = vec![vec!["y".to_string(), "x".into()]];
        assert_eq!(propose_representatives(&pair, &v).unwrap(), vec!["x"]);
    }

    fn tax(entries: &[(&str, usize)]) -> ReasonTaxonomy {
        let mut t = ReasonTaxonomy::default();
        for (name, n) in entries {
            t.actions.insert(
                name.to_string(),
                ActionEntry {
                    reasons: (0..*n)
                        .map(|i| ReasonEntry {
                            id: format!("{name}/{i}"),
                            label: format!("reason {i}"),
                            source: ReasonSource::KnowledgeGraph,
                        })
                        .collect(),
                    clip_count: 0,
                },
            );
        }
        t
    }

    #[test]
    fn funnel_bounds() {
        let t = tax(&[("a", 2), ("b", 5), ("c", 5), ("d", 0)]);
        let counts: BTreeMap<String, usize> =
            [("a".to_string(), 100), ("b".to_string(), 24), ("c".to_string(), 25)].into_iter().collect();
        let (kept, report) = filter_funnel(&t, &counts, 3, 25);
        assert_eq!(kept.actions.keys().collect::<Vec<_>>(), vec!["c"]);
        assert_eq!(report.stages.iter().map(|s| s.count).collect::<Vec<_>>(), vec![4, 3, 2, 1]);
        assert!(report.removed.contains_key("a") && report.removed.contains_key("b"));
        let (again, _) = filter_funnel(&kept, &counts, 3, 25);
        assert_eq!(again, kept);
    }

    fn store(entries: &[(&str, Vec<f64>)]) -> VectorStore {
        let mut s = VectorStore::default();
        for (t, v) in entries {
            s.insert(*t, v.clone()).unwrap();
        }
        s
    }

    #[test]
    fn crowd_admission() {
        let existing =
            vec![ReasonEntry { id: "clean/dirty".into(), label: "dirty".into(), source: ReasonSource::KnowledgeGraph }];
        // cos(dirty, grimy) = 0.95 by construction.
        let s = store(&[
            ("dirty", vec![1.0, 0.0, 0.0]),
            ("guests", vec![0.0, 1.0, 0.0]),
            ("grimy", vec![0.95, (1.0f64 - 0.95 * 0.95).sqrt(), 0.0]),
            ("rare", vec![0.0, 0.0, 1.0]),
        ]);
        let texts: Vec<String> = ["guests", " Guests", "guests", "rare", "rare"]
            .iter()
            .chain(std::iter::repeat_n(&"grimy", 5))
            .map(|s| s.to_string())
            .collect();
        let got = admit_crowd_reasons("clean", &texts, &existing, 3, 0.9, &s).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].label, "guests");
        assert_eq!(got[0].source, ReasonSource::Crowd);

        let missing = vec!["unknown".to_string(); 3];
        assert!(matches!(
            admit_crowd_reasons("clean", &missing, &existing, 3, 0.9, &s),
            Err(Error::MissingEmbedding(t)) if t == "unknown"
        ));
    }

    #[test]
    fn cut_refines() {
        let v = pts(&[0.0, 0.3, 1.0, 4.0, 4.2, 9.0]);
        let t = ward_tree(&v).unwrap();
        let fine = t.cut(0.5);
        let coarse = t.cut(3.0);
        for f in &fine {
            assert!(coarse.iter().any(|c| f.iter().all(|x| c.contains(x))));
        }
    }

    proptest! {
        #[test]
        fn merge_heights_non_decreasing(points in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..12)) {
            let v: Vec<ReasonVector> = points.into_iter().enumerate()
                .map(|(i, p)| ReasonVector { id: format!("p{i:02}"), vector: p }).collect();
            let t = ward_tree(&v).unwrap();
            prop_assert_eq!(t.merges.len(), v.len() - 1);
            for w in t.merges.windows(2) {
                prop_assert!(w[1].distance >= w[0].distance);
            }
        }
    }
}
