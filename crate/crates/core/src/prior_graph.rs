//! Prior similarity graph over law articles.
//!
//! Articles are embedded with smoothed TF-IDF, compared by cosine, and the
//! graph is thresholded: edges with weight below `θ` are removed and the
//! connected components of what remains become communities of confusable
//! articles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::LawArticle;
use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

/// Row-normalized TF-IDF vectors, one row per article.
#[derive(Clone, Debug, PartialEq)]
pub struct TfidfMatrix {
    pub rows: Tensor,
    pub vocabulary: BTreeMap<String, usize>,
}

/// `tf(t, d) · (ln((1 + m) / (1 + df(t))) + 1)` with raw counts for `tf`,
/// then L2-normalized per article. Empty articles keep a zero row.
pub fn compute_tfidf(articles: &[LawArticle]) -> Result<TfidfMatrix> {
    if articles.is_empty() {
        return Err(Error::Empty("no articles".into()));
    }
    let mut vocabulary = BTreeMap::new();
    for a in articles {
        for t in a.tokens() {
            vocabulary.entry(t.clone()).or_insert(0);
        }
    }
    for (i, v) in vocabulary.values_mut().enumerate() {
        *v = i;
    }
    let m = articles.len();
    let n = vocabulary.len();
    let mut rows = Tensor::zeros(m, n);
    let mut df = vec![0usize; n];
    for (i, a) in articles.iter().enumerate() {
        for t in a.tokens() {
            let c = vocabulary[t];
            if rows.get(i, c) == 0.0 {
                df[c] += 1;
            }
            rows.set(i, c, rows.get(i, c) + 1.0);
        }
    }
    let idf: Vec<f64> = df
        .iter()
        .map(|&d| ((1.0 + m as f64) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    for i in 0..m {
        let row = rows.row_mut(i);
        for (x, w) in row.iter_mut().zip(&idf) {
            *x *= w;
        }
        let norm = dot(row, row).sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    Ok(TfidfMatrix { rows, vocabulary })
}

/// Fully connected cosine-similarity graph.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityGraph {
    pub weights: Tensor,
}

impl SimilarityGraph {
    pub fn num_nodes(&self) -> usize {
        self.weights.rows()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }
}

pub fn build_similarity_graph(tfidf: &TfidfMatrix) -> Result<SimilarityGraph> {
    let m = tfidf.rows.rows();
    for i in 0..m {
        if dot(tfidf.rows.row(i), tfidf.rows.row(i)) == 0.0 {
            return Err(Error::ZeroNorm(format!("article {i} has an empty TF-IDF vector")));
        }
    }
    let mut weights = tfidf.rows.matmul_t(&tfidf.rows);
    for i in 0..m {
        weights.set(i, i, 1.0);
        for j in 0..i {
            // Enforce exact symmetry.
            let w = weights.get(i, j);
            weights.set(j, i, w);
        }
    }
    Ok(SimilarityGraph { weights })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Threshold {
    /// Keep an edge iff its weight is at least this value.
    Value(f64),
    /// Every article is its own community, regardless of weights.
    Singletons,
}

impl Threshold {
    pub fn keeps(&self, w: f64) -> bool {
        match self {
            Threshold::Value(t) => w >= *t,
            Threshold::Singletons => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommunityPartition {
    pub threshold: Threshold,
    /// Sorted members; communities ordered by smallest member.
    pub communities: Vec<Vec<usize>>,
    pub membership: Vec<usize>,
    /// Retained-edge adjacency (never crosses communities).
    pub neighbors: Vec<Vec<usize>>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

pub fn partition_communities(graph: &SimilarityGraph, threshold: Threshold) -> CommunityPartition {
    let m = graph.num_nodes();
    let mut uf = UnionFind::new(m);
    let mut neighbors = vec![Vec::new(); m];
    for i in 0..m {
        for j in (i + 1)..m {
            if threshold.keeps(graph.weight(i, j)) {
                uf.union(i, j);
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    for n in &mut neighbors {
        n.sort_unstable();
    }
    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..m {
        by_root.entry(uf.find(i)).or_default().push(i);
    }
    let mut communities: Vec<Vec<usize>> = by_root.into_values().collect();
    communities.sort_by_key(|c| c[0]);
    let mut membership = vec![0; m];
    for (k, c) in communities.iter().enumerate() {
        for &a in c {
            membership[a] = k;
        }
    }
    CommunityPartition {
        threshold,
        communities,
        membership,
        neighbors,
    }
}

impl CommunityPartition {
    pub fn num_communities(&self) -> usize {
        self.communities.len()
    }

    pub fn num_articles(&self) -> usize {
        self.membership.len()
    }

    /// All-singleton partition without retained edges.
    pub fn singletons(m: usize) -> Self {
        CommunityPartition {
            threshold: Threshold::Singletons,
            communities: (0..m).map(|i| vec![i]).collect(),
            membership: (0..m).collect(),
            neighbors: vec![Vec::new(); m],
        }
    }

    /// `{"theta": real|null, "communities": [[ids]], "neighbors": [[ids]]}`;
    /// `theta` is null for the singleton sentinel.
    pub fn to_json(&self) -> serde_json::Value {
        let theta = match self.threshold {
            Threshold::Value(t) => serde_json::json!(t),
            Threshold::Singletons => serde_json::Value::Null,
        };
        serde_json::json!({
            "theta": theta,
            "communities": self.communities,
            "neighbors": self.neighbors,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let threshold = match v.get("theta") {
            Some(serde_json::Value::Null) | None => Threshold::Singletons,
            Some(t) => Threshold::Value(
                t.as_f64()
                    .ok_or_else(|| Error::Config("partition theta must be a number".into()))?,
            ),
        };
        let communities: Vec<Vec<usize>> = serde_json::from_value(
            v.get("communities")
                .cloned()
                .ok_or_else(|| Error::Config("partition lacks communities".into()))?,
        )?;
        let m: usize = communities.iter().map(Vec::len).sum();
        let neighbors: Vec<Vec<usize>> = match v.get("neighbors") {
            Some(n) => serde_json::from_value(n.clone())?,
            None => vec![Vec::new(); m],
        };
        let mut membership = vec![usize::MAX; m];
        for (k, c) in communities.iter().enumerate() {
            for &a in c {
                if a >= m || membership[a] != usize::MAX {
                    return Err(Error::Config("communities do not partition the articles".into()));
                }
                membership[a] = k;
            }
        }
        Ok(CommunityPartition {
            threshold,
            communities,
            membership,
            neighbors,
        })
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Builds the partition straight from article texts.
pub fn build_partition(articles: &[LawArticle], threshold: Threshold) -> Result<CommunityPartition> {
    if let Threshold::Singletons = threshold {
        return Ok(CommunityPartition::singletons(articles.len()));
    }
    let tfidf = compute_tfidf(articles)?;
    let graph = build_similarity_graph(&tfidf)?;
    Ok(partition_communities(&graph, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn article(id: usize, text: &str) -> LawArticle {
        LawArticle {
            article_id: id,
            text: vec![text.split_whitespace().map(str::to_string).collect()],
        }
    }

    /// Hand computation for articles "a b", "a c", "d" (m = 3):
    /// df(a) = 2 -> idf = ln(4/3) + 1; df(b) = df(c) = df(d) = 1 -> idf = ln 2 + 1.
    #[test]
    fn hand_built_tfidf_and_similarity() {
        let arts = [article(0, "a b"), article(1, "a c"), article(2, "d")];
        let t = compute_tfidf(&arts).unwrap();
        let ia = (4.0f64 / 3.0).ln() + 1.0;
        let ib = 2.0f64.ln() + 1.0;
        let n = (ia * ia + ib * ib).sqrt();
        let col = |tok: &str| t.vocabulary[tok];
        assert!((t.rows.get(0, col("a")) - ia / n).abs() < 1e-12);
        assert!((t.rows.get(0, col("b")) - ib / n).abs() < 1e-12);
        assert_eq!(t.rows.get(0, col("c")), 0.0);
        assert!((t.rows.get(1, col("c")) - ib / n).abs() < 1e-12);
        assert!((t.rows.get(2, col("d")) - 1.0).abs() < 1e-12);

        let g = build_similarity_graph(&t).unwrap();
        let expected = ia * ia / (ia * ia + ib * ib);
        assert!((g.weight(0, 1) - expected).abs() < 1e-12);
        assert_eq!(g.weight(1, 0), g.weight(0, 1));
        assert_eq!(g.weight(0, 2), 0.0);
        assert_eq!(g.weight(2, 2), 1.0);
    }

    #[test]
    fn identical_articles_identical_rows() {
        let arts = [article(0, "x y z"), article(1, "x y z"), article(2, "q")];
        let t = compute_tfidf(&arts).unwrap();
        assert_eq!(t.rows.row(0), t.rows.row(1));
        let g = build_similarity_graph(&t).unwrap();
        assert!((g.weight(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ubiquitous_token_idf_is_one() {
        let arts: Vec<_> = (0..50).map(|i| article(i, &format!("common t{i}"))).collect();
        let t = compute_tfidf(&arts).unwrap();
        let c = t.vocabulary["common"];
        let u = t.vocabulary["t0"];
        // Ratio of weights in one row equals idf(common) / idf(t0).
        let ratio = t.rows.get(0, c) / t.rows.get(0, u);
        let idf_u = (51.0f64 / 2.0).ln() + 1.0;
        assert!((ratio * idf_u - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_article_rejected_by_graph() {
        let arts = [
            article(0, "a"),
            LawArticle {
                article_id: 1,
                text: vec![],
            },
        ];
        let t = compute_tfidf(&arts).unwrap();
        assert!(matches!(build_similarity_graph(&t), Err(Error::ZeroNorm(_))));
    }

    fn graph_from(m: usize, edges: &[(usize, usize, f64)]) -> SimilarityGraph {
        let mut w = Tensor::identity(m);
        for &(i, j, x) in edges {
            w.set(i, j, x);
            w.set(j, i, x);
        }
        SimilarityGraph { weights: w }
    }

    #[test]
    fn threshold_examples() {
        let g = graph_from(
            4,
            &[(0, 1, 0.6), (1, 2, 0.5), (0, 2, 0.2), (0, 3, 0.1), (1, 3, 0.2), (2, 3, 0.05)],
        );
        let p = partition_communities(&g, Threshold::Value(0.35));
        assert_eq!(p.communities, vec![vec![0, 1, 2], vec![3]]);
        assert_eq!(p.neighbors[1], vec![0, 2]);
        assert_eq!(p.neighbors[0], vec![1]);
        assert_eq!(partition_communities(&g, Threshold::Value(0.0)).num_communities(), 1);
        assert_eq!(partition_communities(&g, Threshold::Value(0.61)).num_communities(), 4);
        let s = partition_communities(&graph_from(3, &[(0, 1, 1.0)]), Threshold::Singletons);
        assert_eq!(s.communities, vec![vec![0], vec![1], vec![2]]);
        assert!(s.neighbors.iter().all(Vec::is_empty));
    }

    #[test]
    fn duplicates_stay_joined_at_one() {
        let g = graph_from(2, &[(0, 1, 1.0)]);
        assert_eq!(partition_communities(&g, Threshold::Value(1.0)).num_communities(), 1);
    }

    #[test]
    fn json_round_trip() {
        let g = graph_from(4, &[(0, 1, 0.6), (2, 3, 0.4)]);
        let p = partition_communities(&g, Threshold::Value(0.35));
        let back = CommunityPartition::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        let s = CommunityPartition::singletons(3);
        assert_eq!(CommunityPartition::from_json(&s.to_json()).unwrap(), s);
        assert_ne!(p.hash(), s.hash());
    }

    fn random_graph() -> impl Strategy<Value = SimilarityGraph> {
        (1usize..20).prop_flat_map(|m| {
            prop::collection::vec(0.0f64..1.0, m * m).prop_map(move |w| {
                let mut t = Tensor::identity(m);
                for i in 0..m {
                    for j in 0..i {
                        t.set(i, j, w[i * m + j]);
                        t.set(j, i, w[i * m + j]);
                    }
                }
                SimilarityGraph { weights: t }
            })
        })
    }

    proptest! {
        #[test]
        fn higher_threshold_refines(g in random_graph(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let coarse = partition_communities(&g, Threshold::Value(lo));
            let fine = partition_communities(&g, Threshold::Value(hi));
            prop_assert!(fine.num_communities() >= coarse.num_communities());
            for c in &fine.communities {
                let owner = coarse.membership[c[0]];
                prop_assert!(c.iter().all(|&x| coarse.membership[x] == owner));
            }
            for (i, ns) in fine.neighbors.iter().enumerate() {
                for &j in ns {
                    prop_assert!(g.weight(i, j) >= hi);
                    prop_assert_eq!(fine.membership[i], fine.membership[j]);
                }
            }
        }
    }
}
