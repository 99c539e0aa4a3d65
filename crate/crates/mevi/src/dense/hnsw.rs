//! Hierarchical navigable small-world graph: greedy descent through sparse
//! upper layers, then a best-first beam over layer 0.
//!
//! The graph stores ordinals only; vectors stay in the caller's matrix, so
//! inserts must follow ordinal order. Removed documents keep routing
//! traffic and are filtered from results, which matches the tombstone
//! contract of the cluster index. Writers need `&mut self`; searches are
//! read-only and safe to run concurrently.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{Metric, ScoredDocs};
use crate::embedding::Matrix;
use crate::error::{MeviError, Result};

/// Graph construction knobs. `max_neighbors` is the per-vertex degree cap on
/// upper layers (layer 0 allows twice that).
#[derive(Debug, Clone, Copy)]
pub struct HnswParams {
    pub max_neighbors: usize,
    pub ef_construction: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            max_neighbors: 16,
            ef_construction: 200,
            seed: 0,
        }
    }
}

const MAX_LEVEL: usize = 24;

/// Distance ordered by total order so heap behavior is deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, Default)]
struct Node {
    /// links[level] holds the neighbor ordinals at that level.
    links: Vec<Vec<u32>>,
}

/// Visited markers with epoch reuse, so builds do not pay a clear per
/// insertion.
#[derive(Debug, Default)]
struct VisitedSet {
    gen: Vec<u32>,
    epoch: u32,
}

impl VisitedSet {
    fn begin(&mut self, n: usize) {
        if self.gen.len() < n {
            self.gen.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.gen.fill(0);
            self.epoch = 1;
        }
    }

    fn mark(&mut self, i: u32) -> bool {
        let slot = &mut self.gen[i as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

#[derive(Debug)]
pub struct HnswIndex {
    params: HnswParams,
    metric: Metric,
    nodes: Vec<Node>,
    entry: Option<u32>,
    max_level: usize,
    level_mult: f64,
    rng: ChaCha12Rng,
    scratch: VisitedSet,
}

fn search_layer(
    nodes: &[Node],
    vectors: &Matrix,
    metric: Metric,
    q: &[f32],
    entry_points: &[u32],
    ef: usize,
    level: usize,
    visited: &mut VisitedSet,
) -> Vec<(f64, u32)> {
    visited.begin(nodes.len());
    // Min-heap of frontier candidates, max-heap of the best ef results.
    let mut frontier: BinaryHeap<Reverse<(Dist, u32)>> = BinaryHeap::new();
    let mut best: BinaryHeap<(Dist, u32)> = BinaryHeap::new();

    for &ep in entry_points {
        if !visited.mark(ep) {
            continue;
        }
        let d = metric.distance(q, vectors.row(ep as usize));
        frontier.push(Reverse((Dist(d), ep)));
        best.push((Dist(d), ep));
    }
    while best.len() > ef {
        best.pop();
    }

    while let Some(Reverse((Dist(d), node))) = frontier.pop() {
        let worst = best.peek().map(|(Dist(w), _)| *w).unwrap_or(f64::INFINITY);
        if d > worst && best.len() >= ef {
            break;
        }
        for &nb in &nodes[node as usize].links[level] {
            if !visited.mark(nb) {
                continue;
            }
            let nd = metric.distance(q, vectors.row(nb as usize));
            let worst = best.peek().map(|(Dist(w), _)| *w).unwrap_or(f64::INFINITY);
            if best.len() < ef || nd < worst {
                frontier.push(Reverse((Dist(nd), nb)));
                best.push((Dist(nd), nb));
                if best.len() > ef {
                    best.pop();
                }
            }
        }
    }

    let mut out: Vec<(f64, u32)> = best.into_iter().map(|(Dist(d), id)| (d, id)).collect();
    out.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out
}

impl HnswIndex {
    pub fn new(metric: Metric, params: HnswParams) -> Self {
        let m = params.max_neighbors.max(2);
        Self {
            params,
            metric,
            nodes: Vec::new(),
            entry: None,
            max_level: 0,
            level_mult: 1.0 / (m as f64).ln(),
            rng: ChaCha12Rng::seed_from_u64(params.seed),
            scratch: VisitedSet::default(),
        }
    }

    /// Builds a graph over every row of `vectors` by sequential insertion.
    pub fn build(vectors: &Matrix, metric: Metric, params: HnswParams) -> Result<Self> {
        let mut index = Self::new(metric, params);
        for ordinal in 0..vectors.rows() {
            index.insert(vectors, ordinal)?;
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    fn sample_level(&mut self) -> usize {
        let u: f64 = self.rng.random::<f64>().max(f64::MIN_POSITIVE);
        ((-u.ln() * self.level_mult).floor() as usize).min(MAX_LEVEL)
    }

    /// Neighbor-selection heuristic: keep a candidate only if it is closer
    /// to the query point than to every already-kept neighbor; pruned
    /// candidates backfill unused slots.
    fn select_neighbors(
        &self,
        vectors: &Matrix,
        candidates: &[(f64, u32)],
        m: usize,
    ) -> Vec<u32> {
        let mut selected: Vec<(f64, u32)> = Vec::with_capacity(m);
        let mut pruned: Vec<u32> = Vec::new();
        for &(d, cand) in candidates {
            if selected.len() >= m {
                break;
            }
            let cv = vectors.row(cand as usize);
            let dominated = selected.iter().any(|&(_, s)| {
                self.metric.distance(cv, vectors.row(s as usize)) < d
            });
            if dominated {
                pruned.push(cand);
            } else {
                selected.push((d, cand));
            }
        }
        let mut out: Vec<u32> = selected.into_iter().map(|(_, id)| id).collect();
        for cand in pruned {
            if out.len() >= m {
                break;
            }
            out.push(cand);
        }
        out
    }

    /// Inserts the vector stored at row `ordinal`. Ordinals must arrive in
    /// order, one node per matrix row.
    pub fn insert(&mut self, vectors: &Matrix, ordinal: usize) -> Result<()> {
        if ordinal != self.nodes.len() {
            return Err(MeviError::InvalidArgument(format!(
                "hnsw insert out of order: got ordinal {ordinal}, expected {}",
                self.nodes.len()
            )));
        }
        if ordinal >= vectors.rows() {
            return Err(MeviError::InvalidArgument(
                "hnsw insert beyond vector storage".into(),
            ));
        }

        let level = self.sample_level();
        self.nodes.push(Node {
            links: vec![Vec::new(); level + 1],
        });
        let Some(entry) = self.entry else {
            self.entry = Some(ordinal as u32);
            self.max_level = level;
            return Ok(());
        };

        let q = vectors.row(ordinal).to_vec();
        let mut visited = std::mem::take(&mut self.scratch);
        let mut eps = vec![entry];

        // Greedy descent through layers the new node does not occupy.
        let mut l = self.max_level;
        while l > level {
            let found = search_layer(&self.nodes, vectors, self.metric, &q, &eps, 1, l, &mut visited);
            if let Some(&(_, best)) = found.first() {
                eps = vec![best];
            }
            l -= 1;
        }

        // Connect on every shared layer, from the top down.
        let m = self.params.max_neighbors;
        for l in (0..=level.min(self.max_level)).rev() {
            let candidates = search_layer(
                &self.nodes,
                vectors,
                self.metric,
                &q,
                &eps,
                self.params.ef_construction,
                l,
                &mut visited,
            );
            let chosen = self.select_neighbors(vectors, &candidates, m);
            let cap = if l == 0 { 2 * m } else { m };

            self.nodes[ordinal].links[l] = chosen.clone();
            for nb in chosen {
                self.nodes[nb as usize].links[l].push(ordinal as u32);
                if self.nodes[nb as usize].links[l].len() > cap {
                    let nv = vectors.row(nb as usize);
                    let mut with_dist: Vec<(f64, u32)> = self.nodes[nb as usize].links[l]
                        .iter()
                        .map(|&x| (self.metric.distance(nv, vectors.row(x as usize)), x))
                        .collect();
                    with_dist.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    self.nodes[nb as usize].links[l] =
                        self.select_neighbors(vectors, &with_dist, cap);
                }
            }
            eps = candidates.into_iter().map(|(_, id)| id).collect();
        }

        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(ordinal as u32);
        }
        self.scratch = visited;
        Ok(())
    }

    /// Approximate top-K. With `ef` at least the corpus size on a connected
    /// graph this equals the exact scan.
    pub fn search(
        &self,
        vectors: &Matrix,
        alive: &[bool],
        q: &[f32],
        top_k: usize,
        ef: usize,
    ) -> Result<ScoredDocs> {
        if self.nodes.is_empty() {
            return Err(MeviError::EmptyIndex);
        }
        if ef < top_k {
            return Err(MeviError::InvalidArgument(format!(
                "ef_search ({ef}) must be at least K ({top_k})"
            )));
        }
        if q.len() != vectors.dim() {
            return Err(MeviError::DimensionMismatch {
                expected: vectors.dim(),
                got: q.len(),
            });
        }

        let mut visited = VisitedSet::default();
        let mut eps = vec![self.entry.expect("non-empty index has an entry")];
        for l in (1..=self.max_level).rev() {
            let found = search_layer(&self.nodes, vectors, self.metric, q, &eps, 1, l, &mut visited);
            if let Some(&(_, best)) = found.first() {
                eps = vec![best];
            }
        }
        let found = search_layer(&self.nodes, vectors, self.metric, q, &eps, ef, 0, &mut visited);

        let entries: Vec<(usize, f64)> = found
            .into_iter()
            .filter(|(_, id)| alive.get(*id as usize).copied().unwrap_or(false))
            .take(top_k)
            .map(|(d, id)| (id as usize, -d))
            .collect();
        Ok(ScoredDocs {
            metric: self.metric,
            entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::exact_search;
    use crate::test_util::random_embedding_set;

    #[test]
    fn exhaustive_ef_matches_exact_search() {
        let x = random_embedding_set(100, 8, 31);
        let alive = vec![true; x.count()];
        let index = HnswIndex::build(x.vectors(), Metric::InnerProduct, HnswParams::default())
            .unwrap();
        let queries = random_embedding_set(10, 8, 32);
        for qi in 0..queries.count() {
            let q = queries.vector(qi);
            let approx = index.search(x.vectors(), &alive, q, 10, 100).unwrap();
            let exact = exact_search(x.vectors(), &alive, q, 10, Metric::InnerProduct).unwrap();
            assert_eq!(approx.entries.len(), exact.entries.len(), "query {qi}");
            for ((ao, as_), (eo, es)) in approx.entries.iter().zip(exact.entries.iter()) {
                assert_eq!(ao, eo, "query {qi}");
                assert!((as_ - es).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn insert_then_query_self_is_rank_one() {
        let x = random_embedding_set(60, 6, 41);
        let alive = vec![true; x.count()];
        let mut index = HnswIndex::new(Metric::Cosine, HnswParams::default());
        for o in 0..x.count() {
            index.insert(x.vectors(), o).unwrap();
        }
        let got = index.search(x.vectors(), &alive, x.vector(17), 1, 30).unwrap();
        assert_eq!(got.entries[0].0, 17);
    }

    #[test]
    fn search_rejects_small_ef_and_empty_index() {
        let x = random_embedding_set(10, 4, 1);
        let alive = vec![true; 10];
        let index = HnswIndex::build(x.vectors(), Metric::L2, HnswParams::default()).unwrap();
        assert!(matches!(
            index.search(x.vectors(), &alive, x.vector(0), 5, 3),
            Err(MeviError::InvalidArgument(_))
        ));
        let empty = HnswIndex::new(Metric::L2, HnswParams::default());
        assert!(matches!(
            empty.search(x.vectors(), &alive, x.vector(0), 1, 1),
            Err(MeviError::EmptyIndex)
        ));
    }

    #[test]
    fn removed_documents_are_filtered_from_results() {
        let x = random_embedding_set(40, 6, 8);
        let mut alive = vec![true; x.count()];
        let index = HnswIndex::build(x.vectors(), Metric::Cosine, HnswParams::default()).unwrap();
        alive[5] = false;
        let got = index.search(x.vectors(), &alive, x.vector(5), 10, 40).unwrap();
        assert!(got.ordinals().all(|o| o != 5));
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let x = random_embedding_set(80, 6, 13);
        let alive = vec![true; x.count()];
        let a = HnswIndex::build(x.vectors(), Metric::InnerProduct, HnswParams::default()).unwrap();
        let b = HnswIndex::build(x.vectors(), Metric::InnerProduct, HnswParams::default()).unwrap();
        for qi in 0..5 {
            let qa = a.search(x.vectors(), &alive, x.vector(qi), 10, 20).unwrap();
            let qb = b.search(x.vectors(), &alive, x.vector(qi), 10, 20).unwrap();
            assert_eq!(qa, qb);
        }
    }

    #[test]
    fn out_of_order_insert_is_rejected() {
        let x = random_embedding_set(5, 4, 2);
        let mut index = HnswIndex::new(Metric::L2, HnswParams::default());
        assert!(index.insert(x.vectors(), 1).is_err());
    }
}
