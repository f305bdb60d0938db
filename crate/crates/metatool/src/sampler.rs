//! Candidate-set sampling: turning (query, corpus) into selection tasks.
//!
//! A task is one query plus a fixed-size candidate set containing the gold
//! tool and uniformly drawn distractors. A meta-task is `k` tasks sharing
//! one query with independently resampled candidate sets. Sampling is
//! splittable: each task's randomness comes from `(seed, query_id, ordinal)`
//! alone, so tasks can be rebuilt out of order and still agree byte for byte.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::seeds;

/// Where distractors come from: the gold tool's own domain, or the whole
/// tool table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Single-domain: distractors share the gold tool's domain.
    Sd,
    /// Cross-domain: distractors drawn from every domain.
    Cd,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Sd => "sd",
            Strategy::Cd => "cd",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    /// Candidate-set size including the gold tool. At least 2.
    pub set_size: usize,
    /// Tasks per meta-task. At least 1.
    pub k: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Sd,
            set_size: 6,
            k: 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("set_size must be at least 2, got {0}")]
    SetSizeTooSmall(usize),
    #[error("k must be at least 1")]
    KZero,
    #[error("unknown query id {0:?}")]
    UnknownQuery(String),
    #[error(
        "query {query:?} needs {needed} distractors under {strategy} but only {available} tools are eligible"
    )]
    NotEnoughTools {
        query: String,
        strategy: Strategy,
        needed: usize,
        available: usize,
    },
}

/// One selection instance: a query and its candidate tool ids. The gold
/// tool sits at `gold_index`; all candidates are distinct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub query_id: String,
    pub candidates: Vec<String>,
    pub gold_index: usize,
}

impl Task {
    pub fn gold_tool_id(&self) -> &str {
        &self.candidates[self.gold_index]
    }

    /// Checks the structural invariants against a corpus; used when tasks
    /// come back from disk rather than from the sampler.
    pub fn validate(&self, corpus: &Corpus) -> Result<(), String> {
        let query = corpus
            .query(&self.query_id)
            .ok_or_else(|| format!("task references unknown query {:?}", self.query_id))?;
        if self.gold_index >= self.candidates.len() {
            return Err(format!(
                "gold_index {} out of range for {} candidates",
                self.gold_index,
                self.candidates.len()
            ));
        }
        if self.candidates[self.gold_index] != query.gold_tool_id {
            return Err(format!(
                "candidate at gold_index is {:?}, expected {:?}",
                self.candidates[self.gold_index], query.gold_tool_id
            ));
        }
        let mut seen = HashSet::new();
        for id in &self.candidates {
            if corpus.tool(id).is_none() {
                return Err(format!("task references unknown tool {id:?}"));
            }
            if !seen.insert(id.as_str()) {
                return Err(format!("candidate {id:?} repeats"));
            }
        }
        Ok(())
    }
}

/// `k` tasks sharing a query, candidate sets resampled independently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaTask {
    pub query_id: String,
    pub tasks: Vec<Task>,
}

fn check_config(config: &SamplerConfig) -> Result<(), SamplerError> {
    if config.set_size < 2 {
        return Err(SamplerError::SetSizeTooSmall(config.set_size));
    }
    if config.k == 0 {
        return Err(SamplerError::KZero);
    }
    Ok(())
}

/// Draws one candidate set for `query_id` from the given RNG: distractors
/// uniform without replacement from the strategy's pool, gold position
/// uniform over the set.
pub fn sample_tool_set(
    corpus: &Corpus,
    query_id: &str,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Task, SamplerError> {
    check_config(config)?;
    let query = corpus
        .query(query_id)
        .ok_or_else(|| SamplerError::UnknownQuery(query_id.to_string()))?;
    let gold_id = query.gold_tool_id.as_str();

    // Pools iterate in id order, so the draw depends only on the RNG state.
    let pool: Vec<&str> = match config.strategy {
        Strategy::Sd => corpus
            .tools_in_domain(&query.domain)
            .map(|t| t.id.as_str())
            .filter(|id| *id != gold_id)
            .collect(),
        Strategy::Cd => corpus
            .tools()
            .iter()
            .map(|t| t.id.as_str())
            .filter(|id| *id != gold_id)
            .collect(),
    };

    let needed = config.set_size - 1;
    if pool.len() < needed {
        return Err(SamplerError::NotEnoughTools {
            query: query_id.to_string(),
            strategy: config.strategy,
            needed,
            available: pool.len(),
        });
    }

    let picks = rand::seq::index::sample(rng, pool.len(), needed);
    let gold_index = rng.gen_range(0..config.set_size);
    let mut candidates = Vec::with_capacity(config.set_size);
    let mut distractors = picks.iter().map(|i| pool[i].to_string());
    for slot in 0..config.set_size {
        if slot == gold_index {
            candidates.push(gold_id.to_string());
        } else {
            candidates.push(distractors.next().expect("enough distractors sampled"));
        }
    }

    Ok(Task {
        query_id: query_id.to_string(),
        candidates,
        gold_index,
    })
}

/// Builds the `ordinal`-th task for a query under a run seed. Pure in its
/// arguments; see the module docs for the splittable seeding scheme.
pub fn build_task(
    corpus: &Corpus,
    query_id: &str,
    config: &SamplerConfig,
    seed: u64,
    ordinal: u64,
) -> Result<Task, SamplerError> {
    let mut rng = seeds::rng_for_keyed(seed, "task", query_id, ordinal);
    sample_tool_set(corpus, query_id, config, &mut rng)
}

/// Builds a meta-task of `config.k` tasks sharing `query_id`, using
/// ordinals `base_ordinal..base_ordinal + k`. Trainers advance the base
/// per iteration so re-drawing a query yields fresh candidate sets.
/// Candidate sets may coincide by chance; they are independent draws, not
/// forced to differ.
pub fn build_meta_task(
    corpus: &Corpus,
    query_id: &str,
    config: &SamplerConfig,
    seed: u64,
    base_ordinal: u64,
) -> Result<MetaTask, SamplerError> {
    check_config(config)?;
    let tasks = (0..config.k as u64)
        .map(|t| build_task(corpus, query_id, config, seed, base_ordinal + t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetaTask {
        query_id: query_id.to_string(),
        tasks,
    })
}

/// One evaluation task per query, in query-id order, each at ordinal 0 of
/// the `"eval"` stream.
pub fn build_eval_episodes(
    corpus: &Corpus,
    config: &SamplerConfig,
    seed: u64,
) -> Result<Vec<Task>, SamplerError> {
    corpus
        .queries()
        .iter()
        .map(|q| {
            let mut rng = seeds::rng_for_keyed(seed, "eval", &q.id, 0);
            sample_tool_set(corpus, &q.id, config, &mut rng)
        })
        .collect()
}

/// Archival record: a single JSONL stream can mix plain tasks and
/// meta-tasks, distinguished by the `kind` tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpisodeRecord {
    Task(Task),
    MetaTask(MetaTask),
}

pub fn write_episodes(records: &[EpisodeRecord], path: &Path) -> std::io::Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn read_episodes(path: &Path) -> std::io::Result<Vec<EpisodeRecord>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// Chi-square statistic of observed counts against the uniform distribution
/// over the same bins. Zero total counts yield 0.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 || counts.is_empty() {
        return 0.0;
    }
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum()
}
