//! Ranking clusters for a query: constrained beam search over the codebook
//! (an embedding-distance surrogate for a learned decoder) and a file
//! adapter for externally produced cluster rankings.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};

use crate::cluster_index::ClusterIndex;
use crate::error::{MeviError, Result};
use crate::quantizer::{l2_sq, Code, Codebook};

/// Top-k cluster codes for one query, scores non-increasing, codes distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedClusters {
    entries: Vec<(Code, f64)>,
}

impl RankedClusters {
    pub fn new(entries: Vec<(Code, f64)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for window in entries.windows(2) {
            if window[1].1 > window[0].1 {
                return Err(MeviError::InvalidArgument(
                    "cluster scores must be non-increasing".into(),
                ));
            }
        }
        for (code, _) in &entries {
            if !seen.insert(code.clone()) {
                return Err(MeviError::InvalidArgument(format!(
                    "duplicate cluster code {code}"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Code, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Code, f64)> {
        self.entries.iter()
    }

    /// 0-based rank of `code`, if present.
    pub fn rank_of(&self, code: &Code) -> Option<usize> {
        self.entries.iter().position(|(c, _)| c == code)
    }

    pub fn truncated(&self, k: usize) -> Self {
        Self {
            entries: self.entries.iter().take(k).cloned().collect(),
        }
    }
}

struct Beam {
    digits: Vec<u16>,
    /// Partial reconstruction for this prefix: the running codeword sum for
    /// a residual codebook, the node centroid for a tree codebook.
    repr: Vec<f32>,
    score: f64,
}

fn expansion_digits(
    codebook: &Codebook,
    index: &ClusterIndex,
    constrained: bool,
    prefix: &[u16],
) -> Vec<u16> {
    if constrained {
        index.trie().children_of(prefix)
    } else {
        match codebook {
            Codebook::Rq(cb) => (0..cb.b() as u16).collect(),
            // Tree nodes only exist where training documents went, so the
            // unconstrained space for a tree codebook is its node set.
            Codebook::Tree(cb) => cb.child_digits(prefix),
        }
    }
}

fn child_repr(codebook: &Codebook, parent: &Beam, digit: u16) -> Vec<f32> {
    match codebook {
        Codebook::Rq(cb) => {
            let mut repr = parent.repr.clone();
            for (r, c) in repr
                .iter_mut()
                .zip(cb.codeword(parent.digits.len(), digit as usize))
            {
                *r += *c;
            }
            repr
        }
        Codebook::Tree(cb) => {
            let mut key = parent.digits.clone();
            key.push(digit);
            cb.node(&key).expect("expansion digit without node").to_vec()
        }
    }
}

/// Beam search over code prefixes, scored by negative squared distance
/// between the query and the prefix reconstruction.
///
/// Each step extends every beam by all candidate digits (trie children in
/// constrained mode), keeps the best `beam_width` prefixes, and after `m`
/// steps returns the top `k` complete codes. Ties break lexicographically,
/// so results are deterministic.
pub fn beam_search_clusters(
    q: &[f32],
    codebook: &Codebook,
    index: &ClusterIndex,
    beam_width: usize,
    k: usize,
    constrained: bool,
) -> Result<RankedClusters> {
    if q.len() != codebook.dim() {
        return Err(MeviError::DimensionMismatch {
            expected: codebook.dim(),
            got: q.len(),
        });
    }
    if k == 0 || beam_width == 0 {
        return Err(MeviError::InvalidArgument(
            "k and beam_width must be at least 1".into(),
        ));
    }
    if k > beam_width {
        return Err(MeviError::InvalidArgument(format!(
            "k ({k}) exceeds beam_width ({beam_width})"
        )));
    }
    if constrained && index.trie().is_empty() {
        return Err(MeviError::EmptyIndex);
    }

    let mut beams = vec![Beam {
        digits: Vec::new(),
        repr: vec![0.0; codebook.dim()],
        score: 0.0,
    }];

    for _ in 0..codebook.m() {
        let mut candidates: Vec<Beam> = Vec::new();
        for beam in &beams {
            for digit in expansion_digits(codebook, index, constrained, &beam.digits) {
                let repr = child_repr(codebook, beam, digit);
                let score = -l2_sq(q, &repr);
                let mut digits = beam.digits.clone();
                digits.push(digit);
                candidates.push(Beam {
                    digits,
                    repr,
                    score,
                });
            }
        }
        candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.digits.cmp(&b.digits)));
        candidates.truncate(beam_width);
        beams = candidates;
    }

    RankedClusters::new(
        beams
            .into_iter()
            .take(k)
            .map(|b| (Code::new(b.digits), b.score))
            .collect(),
    )
}

/// Exhaustively scores every live cluster code by reconstruction distance.
/// The oracle that beam search matches when the beam is wide enough.
pub fn exhaustive_cluster_ranking(
    q: &[f32],
    codebook: &Codebook,
    index: &ClusterIndex,
    k: usize,
) -> Result<RankedClusters> {
    let mut scored: Vec<(Code, f64)> = index
        .trie()
        .leaves()
        .into_iter()
        .map(|code| {
            let rec = codebook.reconstruct(&code)?;
            Ok((code, -l2_sq(q, &rec)))
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    RankedClusters::new(scored)
}

/// Reads per-query cluster rankings produced by an external model.
///
/// One record per line: `<query_id>\t<digit>-<digit>-...\t<rank>\t<score>`,
/// ranks 0-based and contiguous per query. Codes are validated against the
/// codebook shape `(m, b)`.
pub fn load_external_rankings<R: Read>(
    reader: R,
    label: &str,
    m: usize,
    b: usize,
) -> Result<BTreeMap<String, RankedClusters>> {
    let reader = BufReader::new(reader);
    let mut per_query: BTreeMap<String, Vec<(usize, Code, f64)>> = BTreeMap::new();
    let mut seen: HashSet<(String, Code)> = HashSet::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |reason: &str| MeviError::ParseError {
            file: label.to_string(),
            line: lineno,
            reason: reason.to_string(),
        };
        let mut fields = line.split('\t');
        let qid = fields.next().ok_or_else(|| parse("missing query id"))?;
        let code_str = fields.next().ok_or_else(|| parse("missing code"))?;
        let rank_str = fields.next().ok_or_else(|| parse("missing rank"))?;
        let score_str = fields.next().ok_or_else(|| parse("missing score"))?;
        if fields.next().is_some() {
            return Err(parse("too many fields"));
        }

        let code: Code = code_str.parse().map_err(|_| parse("malformed code"))?;
        code.validate(m, b)?;
        let rank: usize = rank_str.parse().map_err(|_| parse("malformed rank"))?;
        let score: f64 = score_str.parse().map_err(|_| parse("malformed score"))?;

        if !seen.insert((qid.to_string(), code.clone())) {
            return Err(MeviError::DuplicateClusterEntry {
                query: qid.to_string(),
                code: code.to_string(),
            });
        }
        per_query
            .entry(qid.to_string())
            .or_default()
            .push((rank, code, score));
    }

    let mut out = BTreeMap::new();
    for (qid, mut rows) in per_query {
        rows.sort_by_key(|(rank, _, _)| *rank);
        for (expect, (rank, _, _)) in rows.iter().enumerate() {
            if *rank != expect {
                return Err(MeviError::NonContiguousRanks { query: qid });
            }
        }
        let ranked = RankedClusters::new(
            rows.into_iter().map(|(_, code, score)| (code, score)).collect(),
        )?;
        out.insert(qid, ranked);
    }
    Ok(out)
}

/// Writes rankings in the same format `load_external_rankings` reads.
pub fn write_external_rankings<W: Write>(
    mut writer: W,
    rankings: &BTreeMap<String, RankedClusters>,
) -> Result<()> {
    for (qid, ranked) in rankings {
        for (rank, (code, score)) in ranked.iter().enumerate() {
            writeln!(writer, "{qid}\t{code}\t{rank}\t{score}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{build_rq, KmeansParams};
    use crate::test_util::random_embedding_set;

    fn build_small() -> (crate::embedding::EmbeddingSet, Codebook, ClusterIndex) {
        let x = random_embedding_set(200, 8, 3);
        let rq = build_rq(&x, 3, 4, &KmeansParams::default()).unwrap();
        let idx = ClusterIndex::build_index(rq.codes).unwrap();
        (x, rq.codebook, idx)
    }

    #[test]
    fn wide_beam_matches_exhaustive_oracle() {
        let (x, cb, idx) = build_small();
        let non_empty = idx.non_empty_clusters();
        for i in 0..20 {
            let q = x.vector(i);
            let beam =
                beam_search_clusters(q, &cb, &idx, non_empty, non_empty, true).unwrap();
            let oracle = exhaustive_cluster_ranking(q, &cb, &idx, non_empty).unwrap();
            assert_eq!(beam, oracle, "query {i}");
        }
    }

    #[test]
    fn reconstructed_query_ranks_its_cluster_first() {
        let (_, cb, idx) = build_small();
        // Use live codes whose reconstruction is strictly closest to its own
        // cluster at every prefix; greedy re-encoding witnesses that.
        let mut tested = 0;
        for code in idx.trie().leaves() {
            let q = cb.reconstruct(&code).unwrap();
            if cb.encode(&q).unwrap() != code {
                continue;
            }
            let top = beam_search_clusters(&q, &cb, &idx, 8, 1, true).unwrap();
            assert_eq!(top.entries()[0].0, code);
            tested += 1;
        }
        assert!(tested > 0);
    }

    #[test]
    fn constrained_results_all_have_live_documents() {
        let (x, cb, idx) = build_small();
        let ranked = beam_search_clusters(x.vector(0), &cb, &idx, 50, 20, true).unwrap();
        for (code, _) in ranked.iter() {
            assert!(!idx.members(code).unwrap().is_empty(), "{code}");
        }
    }

    #[test]
    fn growing_k_is_prefix_stable() {
        let (x, cb, idx) = build_small();
        let q = x.vector(7);
        let wide = beam_search_clusters(q, &cb, &idx, 40, 30, true).unwrap();
        for k in 1..=30 {
            let small = beam_search_clusters(q, &cb, &idx, 40, k, true).unwrap();
            assert_eq!(small.entries(), &wide.entries()[..k]);
        }
    }

    #[test]
    fn beam_rejects_bad_arguments() {
        let (x, cb, idx) = build_small();
        assert!(matches!(
            beam_search_clusters(x.vector(0), &cb, &idx, 5, 6, true),
            Err(MeviError::InvalidArgument(_))
        ));

        let empty = {
            let mut i = ClusterIndex::build_index(vec![Code::new(vec![0, 0, 0])]).unwrap();
            i.tombstone(0).unwrap();
            i
        };
        assert!(matches!(
            beam_search_clusters(x.vector(0), &cb, &empty, 5, 5, true),
            Err(MeviError::EmptyIndex)
        ));
    }

    #[test]
    fn unconstrained_beam_covers_full_code_space() {
        let (x, cb, idx) = build_small();
        // 4^3 = 64 possible codes; a width-64 unconstrained beam keeps all.
        let ranked = beam_search_clusters(x.vector(0), &cb, &idx, 64, 64, false).unwrap();
        assert_eq!(ranked.k(), 64);
    }

    #[test]
    fn external_rankings_round_trip() {
        let (x, cb, idx) = build_small();
        let mut map = BTreeMap::new();
        for (i, qid) in ["q1", "q2", "q9"].iter().enumerate() {
            let ranked =
                beam_search_clusters(x.vector(i), &cb, &idx, 20, 10, true).unwrap();
            map.insert(qid.to_string(), ranked);
        }
        let mut buf = Vec::new();
        write_external_rankings(&mut buf, &map).unwrap();
        let loaded = load_external_rankings(&buf[..], "test", cb.m(), cb.b()).unwrap();
        assert_eq!(loaded, map);
    }

    #[test]
    fn external_rankings_single_line() {
        let data = "q1\t3-1-0\t0\t0.91\n";
        let loaded = load_external_rankings(data.as_bytes(), "test", 3, 4).unwrap();
        assert_eq!(loaded.len(), 1);
        let ranked = &loaded["q1"];
        assert_eq!(ranked.k(), 1);
        assert_eq!(ranked.entries()[0].0, Code::new(vec![3, 1, 0]));
        assert_eq!(ranked.entries()[0].1, 0.91);
    }

    #[test]
    fn external_rankings_validation_errors() {
        // Ranks not starting at zero.
        let data = "q1\t0-0-0\t1\t0.9\n";
        assert!(matches!(
            load_external_rankings(data.as_bytes(), "t", 3, 4),
            Err(MeviError::NonContiguousRanks { .. })
        ));

        // Non-contiguous.
        let data = "q1\t0-0-0\t0\t0.9\nq1\t1-0-0\t2\t0.8\n";
        assert!(matches!(
            load_external_rankings(data.as_bytes(), "t", 3, 4),
            Err(MeviError::NonContiguousRanks { .. })
        ));

        // Duplicate (query, code).
        let data = "q1\t0-0-0\t0\t0.9\nq1\t0-0-0\t1\t0.8\n";
        assert!(matches!(
            load_external_rankings(data.as_bytes(), "t", 3, 4),
            Err(MeviError::DuplicateClusterEntry { .. })
        ));

        // Digit out of range for b=4.
        let data = "q1\t0-9-0\t0\t0.9\n";
        assert!(matches!(
            load_external_rankings(data.as_bytes(), "t", 3, 4),
            Err(MeviError::DigitOutOfRange { .. })
        ));

        // Malformed line reports its number.
        let data = "q1\t0-0-0\t0\t0.9\nnot a record\n";
        match load_external_rankings(data.as_bytes(), "t", 3, 4) {
            Err(MeviError::ParseError { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
