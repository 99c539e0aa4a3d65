//! Cluster membership: full-code posting lists, the prefix trie of non-empty
//! codes, and tombstone-based removal.
//!
//! The posting-list key is the complete length-`m` code; two documents share
//! a cluster only when their codes are identical. Removal tombstones the
//! ordinal in O(m) (trie counts are decremented, the posting entry stays
//! until `compact`). Concurrency contract: any number of concurrent readers,
//! or one writer — enforced by the `&mut self` receivers on mutators.

use std::collections::{BTreeMap, HashMap};

use crate::error::{MeviError, Result};
use crate::quantizer::Code;

#[derive(Debug, Clone, Default)]
struct TrieNode {
    /// Live documents below this node.
    count: usize,
    children: BTreeMap<u16, TrieNode>,
}

/// Prefix tree over code digits. A path exists iff some live document's code
/// extends it; per-node counts track live documents below.
#[derive(Debug, Clone, Default)]
pub struct CodeTrie {
    root: TrieNode,
}

impl CodeTrie {
    fn node(&self, prefix: &[u16]) -> Option<&TrieNode> {
        let mut cur = &self.root;
        for d in prefix {
            cur = cur.children.get(d)?;
        }
        Some(cur)
    }

    fn insert(&mut self, digits: &[u16]) {
        let mut cur = &mut self.root;
        cur.count += 1;
        for d in digits {
            cur = cur.children.entry(*d).or_default();
            cur.count += 1;
        }
    }

    /// Decrements counts along the path and prunes nodes that hit zero.
    fn remove(&mut self, digits: &[u16]) {
        fn rec(node: &mut TrieNode, digits: &[u16]) {
            node.count -= 1;
            if let Some((d, rest)) = digits.split_first() {
                let child = node.children.get_mut(d).expect("path must exist");
                rec(child, rest);
                if child.count == 0 {
                    node.children.remove(d);
                }
            }
        }
        rec(&mut self.root, digits);
    }

    /// True when some live document's code extends `prefix`.
    pub fn contains_prefix(&self, prefix: &[u16]) -> bool {
        self.node(prefix).is_some_and(|n| n.count > 0)
    }

    /// Live documents whose codes extend `prefix`.
    pub fn live_below(&self, prefix: &[u16]) -> usize {
        self.node(prefix).map_or(0, |n| n.count)
    }

    /// Digits extending `prefix` to a live path, ascending.
    pub fn children_of(&self, prefix: &[u16]) -> Vec<u16> {
        self.node(prefix)
            .map(|n| n.children.keys().copied().collect())
            .unwrap_or_default()
    }

    /// All complete live codes in lexicographic order.
    pub fn leaves(&self) -> Vec<Code> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        fn walk(node: &TrieNode, path: &mut Vec<u16>, out: &mut Vec<Code>) {
            if node.children.is_empty() {
                if !path.is_empty() {
                    out.push(Code::new(path.clone()));
                }
                return;
            }
            for (d, child) in &node.children {
                path.push(*d);
                walk(child, path, out);
                path.pop();
            }
        }
        walk(&self.root, &mut path, &mut out);
        out
    }

    pub fn is_empty(&self) -> bool {
        self.root.count == 0
    }
}

/// Map from full cluster codes to document ordinals, with the prefix trie of
/// non-empty codes and tombstones for removed documents.
#[derive(Debug, Clone)]
pub struct ClusterIndex {
    m: usize,
    postings: HashMap<Code, Vec<usize>>,
    doc_code: Vec<Code>,
    alive: Vec<bool>,
    live_count: usize,
    trie: CodeTrie,
}

impl ClusterIndex {
    /// Builds the index from one code per document; ordinal `i` gets
    /// `codes[i]`.
    pub fn build_index(codes: Vec<Code>) -> Result<Self> {
        if codes.is_empty() {
            return Err(MeviError::EmptyInput);
        }
        let m = codes[0].len();
        let mut idx = Self {
            m,
            postings: HashMap::new(),
            doc_code: Vec::with_capacity(codes.len()),
            alive: Vec::with_capacity(codes.len()),
            live_count: 0,
            trie: CodeTrie::default(),
        };
        for code in codes {
            idx.insert(code)?;
        }
        Ok(idx)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Total ordinals ever issued, including tombstoned ones.
    pub fn total_count(&self) -> usize {
        self.doc_code.len()
    }

    pub fn live_count(&self) -> usize {
        self.live_count
    }

    pub fn is_live(&self, ordinal: usize) -> bool {
        self.alive.get(ordinal).copied().unwrap_or(false)
    }

    pub fn alive(&self) -> &[bool] {
        &self.alive
    }

    pub fn code_of(&self, ordinal: usize) -> &Code {
        &self.doc_code[ordinal]
    }

    pub fn trie(&self) -> &CodeTrie {
        &self.trie
    }

    /// Number of clusters with at least one live document.
    pub fn non_empty_clusters(&self) -> usize {
        self.trie.leaves().len()
    }

    /// Assigns the next ordinal to a document with the given code.
    pub fn insert(&mut self, code: Code) -> Result<usize> {
        if code.len() != self.m {
            return Err(MeviError::CodeLength {
                expected: self.m,
                got: code.len(),
            });
        }
        let ordinal = self.doc_code.len();
        self.postings.entry(code.clone()).or_default().push(ordinal);
        self.trie.insert(code.digits());
        self.doc_code.push(code);
        self.alive.push(true);
        self.live_count += 1;
        Ok(ordinal)
    }

    /// Tombstones an ordinal: excluded from members, trie counts, and all
    /// search results from now on. The posting entry is dropped at the next
    /// `compact`.
    pub fn tombstone(&mut self, ordinal: usize) -> Result<()> {
        if !self.is_live(ordinal) {
            return Err(MeviError::DeadDocument(ordinal));
        }
        self.alive[ordinal] = false;
        self.live_count -= 1;
        let code = self.doc_code[ordinal].clone();
        self.trie.remove(code.digits());
        Ok(())
    }

    /// Live ordinals whose code is exactly `c`; empty if none.
    pub fn members(&self, c: &Code) -> Result<Vec<usize>> {
        if c.len() != self.m {
            return Err(MeviError::CodeLength {
                expected: self.m,
                got: c.len(),
            });
        }
        Ok(self
            .postings
            .get(c)
            .map(|list| {
                list.iter()
                    .copied()
                    .filter(|&o| self.alive[o])
                    .collect()
            })
            .unwrap_or_default())
    }

    /// Maintenance pass: drops tombstoned ordinals from posting lists and
    /// removes emptied lists. Ordinals are never renumbered.
    pub fn compact(&mut self) {
        let alive = &self.alive;
        self.postings.retain(|_, list| {
            list.retain(|&o| alive[o]);
            !list.is_empty()
        });
    }

    /// Codes paired with their live ordinals, for persistence. Sorted by
    /// ordinal.
    pub fn live_entries(&self) -> Vec<(usize, &Code)> {
        (0..self.doc_code.len())
            .filter(|&o| self.alive[o])
            .map(|o| (o, &self.doc_code[o]))
            .collect()
    }
}
