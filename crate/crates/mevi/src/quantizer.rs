//! Codebook construction: Lloyd's k-means with k-means++ seeding, residual
//! quantization stacks, and the hierarchical k-means comparison builder.
//!
//! Residual quantization clusters the corpus once, subtracts the assigned
//! centroid from every vector, then clusters the residuals again, for `m`
//! layers total. A document's code is the sequence of per-layer centroid
//! indices; documents are in the same cluster only when their full codes are
//! identical.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::embedding::{EmbeddingSet, Matrix};
use crate::error::{MeviError, Result};

/// Digits are stored as u16 on disk, so a layer can hold at most this many
/// codewords.
pub const MAX_CODEWORDS: usize = 1 << 16;

/// Squared Euclidean distance, accumulated in f64.
pub(crate) fn l2_sq(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = (*x - *y) as f64;
        acc += d * d;
    }
    acc
}

/// Index of the row nearest to `v` under squared Euclidean distance, ties
/// broken by lowest index. Returns (index, distance²).
pub(crate) fn nearest_row(rows: &Matrix, v: &[f32]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, row) in rows.iter_rows().enumerate() {
        let d = l2_sq(row, v);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

fn subtract_into(v: &mut [f32], c: &[f32]) {
    for (x, y) in v.iter_mut().zip(c.iter()) {
        *x -= *y;
    }
}

/// Lloyd's iteration controls. `tol` is the centroid-movement threshold that
/// stops iteration early; `seed` makes runs reproducible.
#[derive(Debug, Clone, Copy)]
pub struct KmeansParams {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for KmeansParams {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-4,
            seed: 0,
        }
    }
}

impl KmeansParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// One flat clustering: `b` centroids, one assignment per input point, and
/// the sum of squared point-to-assigned-centroid distances.
#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    pub sse: f64,
}

/// k-means++ seeding: first centroid uniform, then each next centroid drawn
/// with probability proportional to squared distance from the chosen set.
/// When every remaining point duplicates a chosen centroid, the lowest-index
/// point is duplicated, so surplus centroids end up as copies of existing
/// points.
fn kmeans_pp_init(points: &Matrix, b: usize, rng: &mut ChaCha12Rng) -> Matrix {
    let n = points.rows();
    let mut centroids = Matrix::with_capacity(points.dim(), b);
    let first = rng.random_range(0..n);
    centroids.push_row(points.row(first));

    let mut dist: Vec<f64> = points
        .iter_rows()
        .map(|p| l2_sq(p, centroids.row(0)))
        .collect();

    while centroids.rows() < b {
        let total: f64 = dist.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in dist.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            0
        };
        centroids.push_row(points.row(chosen));
        let new = centroids.row(centroids.rows() - 1).to_vec();
        dist.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = l2_sq(points.row(i), &new);
            if nd < *d {
                *d = nd;
            }
        });
    }
    centroids
}

fn assign_all(points: &Matrix, centroids: &Matrix) -> Vec<(usize, f64)> {
    (0..points.rows())
        .into_par_iter()
        .map(|i| nearest_row(centroids, points.row(i)))
        .collect()
}

/// Lloyd's k-means over `points` with `b` clusters.
///
/// Deterministic for a fixed seed. A final assignment pass runs after the
/// last centroid update, so `assignments[i]` is exactly the nearest centroid
/// to point `i` (ties to the lowest index). Empty clusters are respawned at
/// the point currently farthest from its assigned centroid.
pub fn kmeans(points: &Matrix, b: usize, params: &KmeansParams) -> Result<KmeansResult> {
    if points.rows() == 0 {
        return Err(MeviError::EmptyInput);
    }
    if b == 0 || params.max_iters == 0 {
        return Err(MeviError::InvalidArgument(
            "b and max_iters must be at least 1".into(),
        ));
    }
    if b > MAX_CODEWORDS {
        return Err(MeviError::InvalidArgument(format!(
            "b must be at most {MAX_CODEWORDS}"
        )));
    }
    if !points.data().iter().all(|v| v.is_finite()) {
        return Err(MeviError::NonFinite);
    }

    let n = points.rows();
    let dim = points.dim();
    let mut rng = ChaCha12Rng::seed_from_u64(params.seed);
    let mut centroids = kmeans_pp_init(points, b, &mut rng);

    for _ in 0..params.max_iters {
        let assignments = assign_all(points, &centroids);

        // Mean of each cluster, accumulated in f64 in point order.
        let mut sums = vec![0.0f64; b * dim];
        let mut counts = vec![0usize; b];
        for (i, (c, _)) in assignments.iter().enumerate() {
            counts[*c] += 1;
            let sum = &mut sums[c * dim..(c + 1) * dim];
            for (s, x) in sum.iter_mut().zip(points.row(i)) {
                *s += *x as f64;
            }
        }

        let mut next = Matrix::with_capacity(dim, b);
        for c in 0..b {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                let row: Vec<f32> = sums[c * dim..(c + 1) * dim]
                    .iter()
                    .map(|s| (s * inv) as f32)
                    .collect();
                next.push_row(&row);
            } else {
                // placeholder, repaired below
                next.push_row(centroids.row(c));
            }
        }

        // Respawn empty clusters at the points farthest from their assigned
        // centroids, one distinct point per empty cluster.
        let empties: Vec<usize> = (0..b).filter(|c| counts[*c] == 0).collect();
        if !empties.is_empty() {
            let mut by_dist: Vec<usize> = (0..n).collect();
            by_dist.sort_unstable_by(|&i, &j| {
                assignments[j]
                    .1
                    .total_cmp(&assignments[i].1)
                    .then(i.cmp(&j))
            });
            for (slot, c) in empties.into_iter().enumerate() {
                let p = by_dist[slot.min(n - 1)];
                let row = points.row(p).to_vec();
                next.row_mut(c).copy_from_slice(&row);
            }
        }

        let moved = (0..b)
            .map(|c| l2_sq(centroids.row(c), next.row(c)).sqrt())
            .fold(0.0f64, f64::max);
        centroids = next;
        if moved < params.tol {
            break;
        }
    }

    // Final assignment pass after the last centroid update.
    let final_assign = assign_all(points, &centroids);
    let sse: f64 = final_assign.iter().map(|(_, d)| *d).sum();
    Ok(KmeansResult {
        centroids,
        assignments: final_assign.into_iter().map(|(c, _)| c).collect(),
        sse,
    })
}

/// A cluster identifier: one centroid index per layer. The full sequence is
/// the cluster key; two documents share a cluster only when all digits match.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Code {
    digits: Vec<u16>,
}

impl Code {
    pub fn new(digits: Vec<u16>) -> Self {
        Self { digits }
    }

    pub fn digits(&self) -> &[u16] {
        &self.digits
    }

    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    /// Checks length against `m` and every digit against `b`.
    pub fn validate(&self, m: usize, b: usize) -> Result<()> {
        if self.digits.len() != m {
            return Err(MeviError::CodeLength {
                expected: m,
                got: self.digits.len(),
            });
        }
        for &d in &self.digits {
            if d as usize >= b {
                return Err(MeviError::DigitOutOfRange {
                    digit: d as u32,
                    b,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.digits.iter().enumerate() {
            if i > 0 {
                write!(f, "-")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl FromStr for Code {
    type Err = MeviError;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s
            .split('-')
            .map(|p| {
                p.parse::<u16>()
                    .map_err(|_| MeviError::InvalidArgument(format!("bad code digit: {p:?}")))
            })
            .collect::<Result<Vec<u16>>>()?;
        if digits.is_empty() {
            return Err(MeviError::InvalidArgument("empty code".into()));
        }
        Ok(Self { digits })
    }
}

/// Residual-quantization codebook: `m` layers of `b` codewords each. A code
/// reconstructs to the sum of its per-layer codewords.
#[derive(Debug, Clone, PartialEq)]
pub struct RqCodebook {
    layers: Vec<Matrix>,
}

impl RqCodebook {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(MeviError::EmptyInput);
        }
        let b = layers[0].rows();
        let dim = layers[0].dim();
        for l in &layers {
            if l.rows() != b || l.dim() != dim {
                return Err(MeviError::InvalidArgument(
                    "codebook layers must share shape".into(),
                ));
            }
            if !l.data().iter().all(|v| v.is_finite()) {
                return Err(MeviError::NonFinite);
            }
        }
        Ok(Self { layers })
    }

    pub fn m(&self) -> usize {
        self.layers.len()
    }

    pub fn b(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].dim()
    }

    pub fn layer(&self, t: usize) -> &Matrix {
        &self.layers[t]
    }

    pub fn codeword(&self, t: usize, j: usize) -> &[f32] {
        self.layers[t].row(j)
    }

    /// Greedy per-layer assignment: at each layer pick the codeword nearest
    /// to the running residual, then subtract it. Ties go to the lowest
    /// codeword index. For any training document this reproduces its
    /// build-time code.
    pub fn encode(&self, v: &[f32]) -> Result<Code> {
        if v.len() != self.dim() {
            return Err(MeviError::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        let mut residual = v.to_vec();
        let mut digits = Vec::with_capacity(self.m());
        for layer in &self.layers {
            let (j, _) = nearest_row(layer, &residual);
            subtract_into(&mut residual, layer.row(j));
            digits.push(j as u16);
        }
        Ok(Code::new(digits))
    }

    /// Sum of the selected codeword per layer.
    pub fn reconstruct(&self, code: &Code) -> Result<Vec<f32>> {
        code.validate(self.m(), self.b())?;
        let mut out = vec![0.0f32; self.dim()];
        for (t, &d) in code.digits().iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.codeword(t, d as usize)) {
                *o += *c;
            }
        }
        Ok(out)
    }
}

/// Hierarchical k-means codebook: each layer re-clusters the members of every
/// layer-(t-1) cluster independently, so centroids live on tree nodes keyed
/// by their code prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeCodebook {
    m: usize,
    b: usize,
    dim: usize,
    /// levels[t] maps a prefix of length t+1 to that node's centroid.
    levels: Vec<HashMap<Vec<u16>, Vec<f32>>>,
}

impl TreeCodebook {
    pub fn new(m: usize, b: usize, dim: usize, levels: Vec<HashMap<Vec<u16>, Vec<f32>>>) -> Self {
        debug_assert_eq!(levels.len(), m);
        Self { m, b, dim, levels }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node(&self, prefix: &[u16]) -> Option<&[f32]> {
        if prefix.is_empty() || prefix.len() > self.m {
            return None;
        }
        self.levels[prefix.len() - 1]
            .get(prefix)
            .map(|v| v.as_slice())
    }

    /// Digits that extend `prefix` to an existing node, ascending.
    pub fn child_digits(&self, prefix: &[u16]) -> Vec<u16> {
        let depth = prefix.len();
        if depth >= self.m {
            return Vec::new();
        }
        let mut key = prefix.to_vec();
        key.push(0);
        let mut out = Vec::new();
        for j in 0..self.b as u16 {
            *key.last_mut().unwrap() = j;
            if self.levels[depth].contains_key(&key) {
                out.push(j);
            }
        }
        out
    }

    pub fn levels(&self) -> &[HashMap<Vec<u16>, Vec<f32>>] {
        &self.levels
    }

    /// Greedy descent: at each layer pick the nearest existing child
    /// centroid, ties to the lowest digit.
    pub fn encode(&self, v: &[f32]) -> Result<Code> {
        if v.len() != self.dim {
            return Err(MeviError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let mut prefix: Vec<u16> = Vec::with_capacity(self.m);
        for _ in 0..self.m {
            let mut best: Option<(u16, f64)> = None;
            for j in self.child_digits(&prefix) {
                let mut key = prefix.clone();
                key.push(j);
                let node = self.node(&key).expect("child listed but missing");
                let d = l2_sq(v, node);
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            let (j, _) = best.ok_or(MeviError::EmptyIndex)?;
            prefix.push(j);
        }
        Ok(Code::new(prefix))
    }

    /// Leaf centroid of the full code.
    pub fn reconstruct(&self, code: &Code) -> Result<Vec<f32>> {
        code.validate(self.m, self.b)?;
        self.node(code.digits())
            .map(|v| v.to_vec())
            .ok_or_else(|| MeviError::InvalidArgument(format!("no such cluster: {code}")))
    }
}

/// Either codebook flavor behind one interface, so downstream search is
/// agnostic to the builder.
#[derive(Debug, Clone, PartialEq)]
pub enum Codebook {
    Rq(RqCodebook),
    Tree(TreeCodebook),
}

impl Codebook {
    pub fn m(&self) -> usize {
        match self {
            Codebook::Rq(cb) => cb.m(),
            Codebook::Tree(cb) => cb.m(),
        }
    }

    pub fn b(&self) -> usize {
        match self {
            Codebook::Rq(cb) => cb.b(),
            Codebook::Tree(cb) => cb.b(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Codebook::Rq(cb) => cb.dim(),
            Codebook::Tree(cb) => cb.dim(),
        }
    }

    pub fn encode(&self, v: &[f32]) -> Result<Code> {
        match self {
            Codebook::Rq(cb) => cb.encode(v),
            Codebook::Tree(cb) => cb.encode(v),
        }
    }

    pub fn reconstruct(&self, code: &Code) -> Result<Vec<f32>> {
        match self {
            Codebook::Rq(cb) => cb.reconstruct(code),
            Codebook::Tree(cb) => cb.reconstruct(code),
        }
    }

    pub fn builder_name(&self) -> &'static str {
        match self {
            Codebook::Rq(_) => "rq",
            Codebook::Tree(_) => "hkmeans",
        }
    }
}

/// Residual energy left after each layer of a build. Non-increasing over
/// layers on the training set.
#[derive(Debug, Clone)]
pub struct QuantizationReport {
    pub per_layer_sse: Vec<f64>,
    pub total_sse: f64,
}

/// Output of a codebook build: the codebook, one code per training document,
/// and the per-layer residual report.
#[derive(Debug, Clone)]
pub struct CodebookBuild {
    pub codebook: Codebook,
    pub codes: Vec<Code>,
    pub report: QuantizationReport,
}

fn check_build_args(x: &EmbeddingSet, m: usize, b: usize) -> Result<()> {
    if x.is_empty() {
        return Err(MeviError::EmptyInput);
    }
    if m == 0 || b == 0 {
        return Err(MeviError::InvalidArgument(
            "m and b must be at least 1".into(),
        ));
    }
    if b > MAX_CODEWORDS {
        return Err(MeviError::InvalidArgument(format!(
            "b must be at most {MAX_CODEWORDS}"
        )));
    }
    Ok(())
}

/// Builds an `m`-layer residual-quantization codebook over `x`.
///
/// Layer 1 clusters the raw vectors; every later layer clusters the
/// residuals left by the one before. Layer `t` is seeded with `seed + t` so
/// layers are independent but reproducible.
pub fn build_rq(x: &EmbeddingSet, m: usize, b: usize, params: &KmeansParams) -> Result<CodebookBuild> {
    check_build_args(x, m, b)?;
    let n = x.count();
    let mut residuals = x.vectors().clone();
    let mut layers = Vec::with_capacity(m);
    let mut digits = vec![Vec::with_capacity(m); n];
    let mut per_layer_sse = Vec::with_capacity(m);

    for t in 0..m {
        let layer_params = KmeansParams {
            seed: params.seed.wrapping_add(t as u64),
            ..*params
        };
        let km = kmeans(&residuals, b, &layer_params)?;
        for i in 0..n {
            let c = km.assignments[i];
            subtract_into(residuals.row_mut(i), km.centroids.row(c));
            digits[i].push(c as u16);
        }
        per_layer_sse.push(km.sse);
        layers.push(km.centroids);
    }

    let total_sse = *per_layer_sse.last().unwrap();
    Ok(CodebookBuild {
        codebook: Codebook::Rq(RqCodebook::new(layers)?),
        codes: digits.into_iter().map(Code::new).collect(),
        report: QuantizationReport {
            per_layer_sse,
            total_sse,
        },
    })
}

fn hkmeans_node_seed(seed: u64, layer: usize, prefix: &[u16]) -> u64 {
    // The root group follows the residual-quantization seeding so a
    // single-layer build is identical across builders.
    if prefix.is_empty() {
        return seed.wrapping_add(layer as u64);
    }
    // FNV-1a over (seed, layer, prefix) for per-node reproducibility.
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut eat = |byte: u8| {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for byte in seed.to_le_bytes() {
        eat(byte);
    }
    for byte in (layer as u64).to_le_bytes() {
        eat(byte);
    }
    for d in prefix {
        for byte in d.to_le_bytes() {
            eat(byte);
        }
    }
    h
}

/// Builds the hierarchical k-means comparison codebook: layer `t` clusters
/// each layer-(t-1) cluster's members independently into at most `b`
/// sub-clusters of the *original* vectors (no residuals). Codes have the
/// same length-`m` shape as residual-quantization codes.
pub fn build_hierarchical_kmeans(
    x: &EmbeddingSet,
    m: usize,
    b: usize,
    params: &KmeansParams,
) -> Result<CodebookBuild> {
    check_build_args(x, m, b)?;
    let n = x.count();
    let dim = x.dim();
    let mut codes: Vec<Vec<u16>> = vec![Vec::with_capacity(m); n];
    let mut levels: Vec<HashMap<Vec<u16>, Vec<f32>>> = Vec::with_capacity(m);
    let mut per_layer_sse = Vec::with_capacity(m);

    // Groups of member ordinals keyed by their code prefix, split layer by
    // layer. Kept sorted by prefix for determinism.
    let mut groups: Vec<(Vec<u16>, Vec<usize>)> = vec![(Vec::new(), (0..n).collect())];

    for t in 0..m {
        let mut level: HashMap<Vec<u16>, Vec<f32>> = HashMap::new();
        let mut next_groups: Vec<(Vec<u16>, Vec<usize>)> = Vec::new();
        let mut layer_sse = 0.0f64;

        for (prefix, members) in &groups {
            let k = b.min(members.len());
            let mut sub = Matrix::with_capacity(dim, members.len());
            for &i in members {
                sub.push_row(x.vector(i));
            }
            let node_params = KmeansParams {
                seed: hkmeans_node_seed(params.seed, t, prefix),
                ..*params
            };
            let km = kmeans(&sub, k, &node_params)?;
            layer_sse += km.sse;

            let mut children: HashMap<u16, Vec<usize>> = HashMap::new();
            for (slot, &i) in members.iter().enumerate() {
                let d = km.assignments[slot] as u16;
                codes[i].push(d);
                children.entry(d).or_default().push(i);
            }
            for (d, child_members) in children {
                let mut key = prefix.clone();
                key.push(d);
                level.insert(key.clone(), km.centroids.row(d as usize).to_vec());
                next_groups.push((key, child_members));
            }
        }

        next_groups.sort_by(|a, b| a.0.cmp(&b.0));
        per_layer_sse.push(layer_sse);
        levels.push(level);
        groups = next_groups;
    }

    let total_sse = *per_layer_sse.last().unwrap();
    Ok(CodebookBuild {
        codebook: Codebook::Tree(TreeCodebook::new(m, b, dim, levels)),
        codes: codes.into_iter().map(Code::new).collect(),
        report: QuantizationReport {
            per_layer_sse,
            total_sse,
        },
    })
}

/// Total squared reconstruction error of `codes` against `x`.
pub fn quantization_error(x: &EmbeddingSet, codes: &[Code], cb: &Codebook) -> Result<f64> {
    if codes.len() != x.count() {
        return Err(MeviError::InvalidArgument(format!(
            "{} codes for {} vectors",
            codes.len(),
            x.count()
        )));
    }
    let mut total = 0.0f64;
    for (i, code) in codes.iter().enumerate() {
        let rec = cb.reconstruct(code)?;
        total += l2_sq(x.vector(i), &rec);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::{random_embedding_set, toy_four_points};

    /// Brute force over all assignments of 4 points to 2 clusters, centroids
    /// at cluster means. Used as the oracle for the toy k-means example.
    fn brute_force_two_clusters(points: &Matrix) -> (f64, Vec<usize>) {
        let n = points.rows();
        let dim = points.dim();
        let mut best = (f64::INFINITY, vec![0; n]);
        for mask in 0..(1u32 << n) {
            let assign: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let mut sums = vec![0.0f64; 2 * dim];
            let mut counts = [0usize; 2];
            for (i, &c) in assign.iter().enumerate() {
                counts[c] += 1;
                for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(points.row(i)) {
                    *s += *x as f64;
                }
            }
            if counts.contains(&0) {
                continue;
            }
            let mut sse = 0.0f64;
            for (i, &c) in assign.iter().enumerate() {
                for (j, x) in points.row(i).iter().enumerate() {
                    let d = *x as f64 - sums[c * dim + j] / counts[c] as f64;
                    sse += d * d;
                }
            }
            if sse < best.0 {
                best = (sse, assign);
            }
        }
        best
    }

    #[test]
    fn kmeans_toy_matches_brute_force_partition() {
        let x = toy_four_points();
        let points = x.vectors();
        let (oracle_sse, oracle_assign) = brute_force_two_clusters(points);

        let km = kmeans(points, 2, &KmeansParams::default()).unwrap();
        assert!((km.sse - oracle_sse).abs() <= 1e-9 + 1e-6 * oracle_sse.abs());

        // Same partition up to label permutation.
        let same = km.assignments == oracle_assign
            || km
                .assignments
                .iter()
                .zip(&oracle_assign)
                .all(|(a, b)| *a == 1 - *b);
        assert!(same, "partition mismatch: {:?}", km.assignments);

        // Centroids are {(0, 0.5), (10, 10.5)} up to permutation.
        let mut rows: Vec<Vec<f32>> = km.centroids.iter_rows().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(rows[0], vec![0.0, 0.5]);
        assert_eq!(rows[1], vec![10.0, 10.5]);
    }

    #[test]
    fn kmeans_identical_points_single_cluster() {
        let mut m = Matrix::new(2);
        for _ in 0..4 {
            m.push_row(&[3.0, 3.0]);
        }
        let km = kmeans(&m, 1, &KmeansParams::default()).unwrap();
        assert_eq!(km.centroids.row(0), &[3.0, 3.0]);
        assert_eq!(km.sse, 0.0);
    }

    #[test]
    fn kmeans_one_cluster_per_point() {
        let x = random_embedding_set(12, 4, 3);
        let km = kmeans(x.vectors(), 12, &KmeansParams::default()).unwrap();
        assert_eq!(km.sse, 0.0);
        let mut seen: Vec<usize> = km.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 12, "each point must own a centroid");
    }

    #[test]
    fn kmeans_surplus_centroids_get_empty_assignments() {
        let mut m = Matrix::new(2);
        m.push_row(&[0.0, 0.0]);
        m.push_row(&[0.0, 0.0]);
        m.push_row(&[5.0, 5.0]);
        let km = kmeans(&m, 3, &KmeansParams::default()).unwrap();
        assert_eq!(km.sse, 0.0);
        // Two distinct points: one centroid is a duplicate and gets nothing.
        let mut counts = [0usize; 3];
        for &a in &km.assignments {
            counts[a] += 1;
        }
        assert_eq!(counts.iter().filter(|&&c| c == 0).count(), 1);
        for c in 0..3 {
            let row = km.centroids.row(c);
            assert!(row == &[0.0, 0.0][..] || row == &[5.0, 5.0][..]);
        }
    }

    #[test]
    fn kmeans_rejects_bad_input() {
        let empty = Matrix::new(3);
        assert!(matches!(
            kmeans(&empty, 2, &KmeansParams::default()),
            Err(MeviError::EmptyInput)
        ));
        let mut nan = Matrix::new(1);
        nan.push_row(&[f32::NAN]);
        assert!(matches!(
            kmeans(&nan, 1, &KmeansParams::default()),
            Err(MeviError::NonFinite)
        ));
    }

    #[test]
    fn kmeans_assignments_are_nearest_centroid() {
        let x = random_embedding_set(200, 8, 17);
        let km = kmeans(x.vectors(), 7, &KmeansParams::default()).unwrap();
        for i in 0..x.count() {
            let (nearest, _) = nearest_row(&km.centroids, x.vector(i));
            assert_eq!(km.assignments[i], nearest, "point {i}");
        }
        // SSE matches a recomputation.
        let recomputed: f64 = (0..x.count())
            .map(|i| l2_sq(x.vector(i), km.centroids.row(km.assignments[i])))
            .sum();
        assert!((km.sse - recomputed).abs() <= 1e-4 * recomputed.max(1.0));
    }

    #[test]
    fn kmeans_deterministic_per_seed() {
        let x = random_embedding_set(100, 6, 5);
        let a = kmeans(x.vectors(), 5, &KmeansParams::with_seed(9)).unwrap();
        let b = kmeans(x.vectors(), 5, &KmeansParams::with_seed(9)).unwrap();
        assert_eq!(a.centroids.data(), b.centroids.data());
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.sse, b.sse);
    }

    #[test]
    fn rq_single_layer_equals_kmeans() {
        let x = random_embedding_set(60, 5, 11);
        let km = kmeans(x.vectors(), 4, &KmeansParams::default()).unwrap();
        let rq = build_rq(&x, 1, 4, &KmeansParams::default()).unwrap();
        assert_eq!(rq.report.total_sse, km.sse);
        for (i, code) in rq.codes.iter().enumerate() {
            assert_eq!(code.digits(), &[km.assignments[i] as u16]);
        }
    }

    #[test]
    fn rq_toy_two_layers_zero_error() {
        let x = toy_four_points();
        let rq = build_rq(&x, 2, 2, &KmeansParams::default()).unwrap();
        assert!(rq.report.total_sse < 1e-12, "sse {}", rq.report.total_sse);

        // Layer-2 centroids are {(0, -0.5), (0, 0.5)} up to permutation.
        let Codebook::Rq(cb) = &rq.codebook else {
            panic!("expected an rq codebook")
        };
        let mut rows: Vec<Vec<f32>> = cb.layer(1).iter_rows().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a[1].total_cmp(&b[1]));
        assert_eq!(rows[0], vec![0.0, -0.5]);
        assert_eq!(rows[1], vec![0.0, 0.5]);

        // Exact reconstruction of every training point.
        for i in 0..x.count() {
            let rec = rq.codebook.reconstruct(&rq.codes[i]).unwrap();
            assert_eq!(rec, x.vector(i).to_vec());
        }
    }

    #[test]
    fn rq_per_layer_sse_non_increasing() {
        let x = random_embedding_set(500, 16, 23);
        let rq = build_rq(&x, 4, 8, &KmeansParams::default()).unwrap();
        for t in 1..rq.report.per_layer_sse.len() {
            assert!(
                rq.report.per_layer_sse[t] <= rq.report.per_layer_sse[t - 1] + 1e-9,
                "layer {t}: {:?}",
                rq.report.per_layer_sse
            );
        }
    }

    #[test]
    fn rq_encode_matches_build_codes() {
        let x = random_embedding_set(300, 12, 41);
        let rq = build_rq(&x, 3, 8, &KmeansParams::default()).unwrap();
        for i in 0..x.count() {
            let enc = rq.codebook.encode(x.vector(i)).unwrap();
            assert_eq!(enc, rq.codes[i], "doc {i}");
        }
    }

    #[test]
    fn hkmeans_single_layer_matches_rq() {
        let x = random_embedding_set(80, 6, 3);
        let rq = build_rq(&x, 1, 4, &KmeansParams::default()).unwrap();
        let hk = build_hierarchical_kmeans(&x, 1, 4, &KmeansParams::default()).unwrap();
        assert_eq!(rq.codes, hk.codes);
        assert_eq!(rq.report.total_sse, hk.report.total_sse);
        for j in 0..4u16 {
            let code = Code::new(vec![j]);
            assert_eq!(
                rq.codebook.reconstruct(&code).unwrap(),
                hk.codebook.reconstruct(&code).unwrap()
            );
        }
    }

    #[test]
    fn hkmeans_toy_zero_error_same_partition_as_rq() {
        let x = toy_four_points();
        let hk = build_hierarchical_kmeans(&x, 2, 2, &KmeansParams::default()).unwrap();
        assert!(hk.report.total_sse < 1e-12);
        // Both clusters have exactly b members, so each member sits alone in
        // its sub-cluster: all four full codes are distinct.
        let mut codes = hk.codes.clone();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 4);
        for i in 0..x.count() {
            let rec = hk.codebook.reconstruct(&hk.codes[i]).unwrap();
            assert_eq!(rec, x.vector(i).to_vec());
        }
    }

    #[test]
    fn hkmeans_encode_matches_build_codes() {
        let x = random_embedding_set(150, 10, 77);
        let hk = build_hierarchical_kmeans(&x, 3, 4, &KmeansParams::default()).unwrap();
        for i in 0..x.count() {
            let enc = hk.codebook.encode(x.vector(i)).unwrap();
            assert_eq!(enc, hk.codes[i], "doc {i}");
        }
    }

    #[test]
    fn hkmeans_per_layer_sse_non_increasing() {
        let x = random_embedding_set(400, 8, 5);
        let hk = build_hierarchical_kmeans(&x, 4, 5, &KmeansParams::default()).unwrap();
        for t in 1..hk.report.per_layer_sse.len() {
            assert!(hk.report.per_layer_sse[t] <= hk.report.per_layer_sse[t - 1] + 1e-9);
        }
    }

    #[test]
    fn reconstruct_single_layer_and_zero_codebook() {
        let x = random_embedding_set(20, 4, 2);
        let rq = build_rq(&x, 1, 5, &KmeansParams::default()).unwrap();
        let Codebook::Rq(cb) = &rq.codebook else {
            panic!()
        };
        for j in 0..5u16 {
            let rec = cb.reconstruct(&Code::new(vec![j])).unwrap();
            assert_eq!(rec.as_slice(), cb.codeword(0, j as usize));
        }

        let mut zeros = Matrix::new(3);
        for _ in 0..4 {
            zeros.push_row(&[0.0; 3]);
        }
        let zcb = RqCodebook::new(vec![zeros.clone(), zeros]).unwrap();
        assert_eq!(
            zcb.reconstruct(&Code::new(vec![1, 3])).unwrap(),
            vec![0.0; 3]
        );
    }

    #[test]
    fn reconstruct_rejects_out_of_range_digit() {
        let x = random_embedding_set(20, 4, 2);
        let rq = build_rq(&x, 2, 3, &KmeansParams::default()).unwrap();
        let err = rq.codebook.reconstruct(&Code::new(vec![0, 7])).unwrap_err();
        assert!(matches!(err, MeviError::DigitOutOfRange { .. }));
        let err = rq.codebook.reconstruct(&Code::new(vec![0])).unwrap_err();
        assert!(matches!(err, MeviError::CodeLength { .. }));
    }

    #[test]
    fn encode_recovers_strictly_nearest_constructed_code() {
        // On a random codebook, pick the code that greedy assignment itself
        // produces for its own reconstruction; require strict margins at
        // every layer, then verify encode returns it.
        let x = random_embedding_set(64, 8, 101);
        let rq = build_rq(&x, 3, 6, &KmeansParams::default()).unwrap();
        let Codebook::Rq(cb) = &rq.codebook else {
            panic!()
        };

        let mut found = false;
        'outer: for trial in 0..64u16 {
            let candidate = Code::new(vec![
                trial % 6,
                (trial / 6) % 6,
                (trial / 36) % 6,
            ]);
            let v = cb.reconstruct(&candidate).unwrap();
            // Check strict nearest at every prefix under greedy residuals.
            let mut residual = v.clone();
            for (t, &d) in candidate.digits().iter().enumerate() {
                let own = l2_sq(&residual, cb.codeword(t, d as usize));
                for j in 0..cb.b() {
                    if j as u16 == d {
                        continue;
                    }
                    if l2_sq(&residual, cb.codeword(t, j)) <= own + 1e-9 {
                        continue 'outer;
                    }
                }
                subtract_into(&mut residual, cb.codeword(t, d as usize));
            }
            assert_eq!(cb.encode(&v).unwrap(), candidate);
            found = true;
            break;
        }
        assert!(found, "no strictly-separated code found on this codebook");
    }

    #[test]
    fn encode_single_layer_centroid_maps_to_itself() {
        let x = random_embedding_set(30, 4, 9);
        let rq = build_rq(&x, 1, 4, &KmeansParams::default()).unwrap();
        let Codebook::Rq(cb) = &rq.codebook else {
            panic!()
        };
        for j in 0..4 {
            let enc = cb.encode(cb.codeword(0, j)).unwrap();
            assert_eq!(enc.digits(), &[j as u16]);
        }
    }

    #[test]
    fn encode_rejects_dimension_mismatch() {
        let x = random_embedding_set(10, 4, 1);
        let rq = build_rq(&x, 2, 2, &KmeansParams::default()).unwrap();
        assert!(matches!(
            rq.codebook.encode(&[0.0; 3]),
            Err(MeviError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn quantization_error_matches_independent_loop() {
        let x = random_embedding_set(120, 6, 55);
        let rq = build_rq(&x, 3, 4, &KmeansParams::default()).unwrap();
        let got = quantization_error(&x, &rq.codes, &rq.codebook).unwrap();

        // Independent oracle recomputation.
        let mut expect = 0.0f64;
        for i in 0..x.count() {
            let rec = rq.codebook.reconstruct(&rq.codes[i]).unwrap();
            for (a, b) in x.vector(i).iter().zip(rec.iter()) {
                let d = (*a - *b) as f64;
                expect += d * d;
            }
        }
        assert!((got - expect).abs() <= 1e-9 * expect.max(1.0));
        assert!((got - rq.report.total_sse).abs() <= 1e-6 * expect.max(1.0));
    }

    #[test]
    fn quantization_error_zero_on_exact_build() {
        let x = toy_four_points();
        let rq = build_rq(&x, 2, 2, &KmeansParams::default()).unwrap();
        assert_eq!(
            quantization_error(&x, &rq.codes, &rq.codebook).unwrap(),
            0.0
        );
    }

    #[test]
    fn quantization_error_rejects_length_mismatch() {
        let x = random_embedding_set(10, 4, 1);
        let rq = build_rq(&x, 2, 2, &KmeansParams::default()).unwrap();
        assert!(quantization_error(&x, &rq.codes[1..], &rq.codebook).is_err());
    }

    #[test]
    fn encoded_reconstruction_beats_zero_code_in_aggregate() {
        // Cluster means minimize within-cluster error, so over the whole
        // training set encoding beats representing everything by the origin.
        let x = random_embedding_set(80, 6, 13);
        let rq = build_rq(&x, 2, 4, &KmeansParams::default()).unwrap();
        let codes: Vec<Code> = (0..x.count())
            .map(|i| rq.codebook.encode(x.vector(i)).unwrap())
            .collect();
        let encoded_err = quantization_error(&x, &codes, &rq.codebook).unwrap();
        let zero_err: f64 = (0..x.count())
            .map(|i| l2_sq(x.vector(i), &vec![0.0; x.dim()]))
            .sum();
        assert!(
            encoded_err <= zero_err + 1e-9,
            "{encoded_err} vs {zero_err}"
        );
    }

    #[test]
    fn code_display_and_parse_round_trip() {
        let c = Code::new(vec![3, 17, 0, 22]);
        assert_eq!(c.to_string(), "3-17-0-22");
        assert_eq!("3-17-0-22".parse::<Code>().unwrap(), c);
        assert!("3-x-1".parse::<Code>().is_err());
    }
}
