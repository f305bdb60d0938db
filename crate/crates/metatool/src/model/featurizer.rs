//! Hashed character n-gram features.
//!
//! Text is lowercased, sliced into overlapping `ngram_length`-char windows,
//! and each window is FNV-1a-hashed into one of `dim` buckets. Bucket counts
//! are L2-normalized, so every non-empty text maps to a unit vector and the
//! model sees scale-free inputs. Texts shorter than one window map to the
//! zero vector.
//!
//! A scorer input concatenates three `dim`-wide segments: query features,
//! candidate features, and their elementwise product. The product segment
//! is what lets a single hidden layer express query–tool agreement cheaply.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, ToolSpec};
use crate::seeds;

/// Shape of the featurizer and the scorer built on top of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hash buckets per feature segment.
    pub dim: usize,
    /// Hidden units in the scorer.
    pub hidden_dim: usize,
    /// Characters per hashed window.
    pub ngram_length: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            hidden_dim: 32,
            ngram_length: 3,
        }
    }
}

impl ModelConfig {
    /// Scorer input width: query, candidate, and product segments.
    pub fn input_dim(&self) -> usize {
        3 * self.dim
    }
}

/// Sparse vector with strictly increasing indices. Values are finite and
/// nonzero; the empty vector is the zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl SparseVec {
    pub fn empty() -> Self {
        Self {
            idx: Vec::new(),
            val: Vec::new(),
        }
    }

    /// Builds from parallel arrays; callers must pass strictly increasing
    /// indices.
    pub fn from_parts(idx: Vec<u32>, val: Vec<f64>) -> Self {
        debug_assert!(idx.windows(2).all(|w| w[0] < w[1]), "indices must increase");
        debug_assert_eq!(idx.len(), val.len());
        Self { idx, val }
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.idx.iter().copied().zip(self.val.iter().copied())
    }

    pub fn l2_norm(&self) -> f64 {
        self.val.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Features for one text under the given config.
pub fn featurize(text: &str, config: &ModelConfig) -> SparseVec {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    if chars.len() < config.ngram_length {
        return SparseVec::empty();
    }
    let mut counts = vec![0.0f64; config.dim];
    let mut buf = [0u8; 4];
    for window in chars.windows(config.ngram_length) {
        let mut hash = seeds::FNV_OFFSET;
        for &ch in window {
            hash = seeds::fnv1a64_extend(hash, ch.encode_utf8(&mut buf).as_bytes());
        }
        counts[(hash % config.dim as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut idx = Vec::new();
    let mut val = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        if c > 0.0 {
            idx.push(i as u32);
            val.push(c / norm);
        }
    }
    SparseVec { idx, val }
}

/// The text a tool is featurized from: name, description, and parameter
/// names, space-joined. Parameter descriptions are left out so candidate
/// vectors stay short.
pub fn encode_tool(tool: &ToolSpec) -> String {
    let mut text = format!("{} {}", tool.name, tool.description);
    for param in &tool.params {
        text.push(' ');
        text.push_str(&param.name);
    }
    text
}

/// Concatenates query, candidate, and product segments into one sparse
/// scorer input of width `3 * dim`.
pub fn build_input(query: &SparseVec, candidate: &SparseVec, dim: usize) -> SparseVec {
    let offset_c = dim as u32;
    let offset_p = 2 * dim as u32;
    let mut idx = Vec::with_capacity(query.nnz() + candidate.nnz() * 2);
    let mut val = Vec::with_capacity(idx.capacity());
    idx.extend_from_slice(&query.idx);
    val.extend_from_slice(&query.val);
    for (i, v) in candidate.iter() {
        idx.push(offset_c + i);
        val.push(v);
    }
    // Product segment: intersection of the two sorted index lists.
    let (mut a, mut b) = (0usize, 0usize);
    while a < query.idx.len() && b < candidate.idx.len() {
        match query.idx[a].cmp(&candidate.idx[b]) {
            std::cmp::Ordering::Less => a += 1,
            std::cmp::Ordering::Greater => b += 1,
            std::cmp::Ordering::Equal => {
                idx.push(offset_p + query.idx[a]);
                val.push(query.val[a] * candidate.val[b]);
                a += 1;
                b += 1;
            }
        }
    }
    SparseVec { idx, val }
}

/// Precomputed feature vectors for every tool and query in a corpus.
/// Read-only after construction, so evaluation can share it across threads.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    config: ModelConfig,
    tools: HashMap<String, SparseVec>,
    queries: HashMap<String, SparseVec>,
}

impl FeatureCache {
    pub fn build(corpus: &Corpus, config: &ModelConfig) -> Self {
        let tools = corpus
            .tools()
            .iter()
            .map(|t| (t.id.clone(), featurize(&encode_tool(t), config)))
            .collect();
        let queries = corpus
            .queries()
            .iter()
            .map(|q| (q.id.clone(), featurize(&q.text, config)))
            .collect();
        Self {
            config: *config,
            tools,
            queries,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tool(&self, id: &str) -> Option<&SparseVec> {
        self.tools.get(id)
    }

    pub fn query(&self, id: &str) -> Option<&SparseVec> {
        self.queries.get(id)
    }

    /// Scorer input for a (query, candidate) pair, or `None` if either id
    /// is missing from the cache.
    pub fn input_for(&self, query_id: &str, tool_id: &str) -> Option<SparseVec> {
        Some(build_input(
            self.query(query_id)?,
            self.tool(tool_id)?,
            self.config.dim,
        ))
    }
}
