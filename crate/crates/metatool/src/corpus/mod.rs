//! Synthetic tool-selection corpus: typed records, integrity checks,
//! JSONL persistence, per-domain stats, and the unseen-tool split.
//!
//! A corpus is a flat tool table plus a flat query table. Invariants are
//! enforced at construction, so every `Corpus` value in the program is
//! well-formed: ids unique, names unique per domain, every query's gold
//! tool resolvable and in the query's own domain.

mod generate;
mod templates;

pub use generate::{generate_corpus, paper_profile};
pub use templates::{
    domain_phrase, domain_slug, pool_for, synonyms_for, DEFAULT_DOMAINS, QUERY_TEMPLATES,
    VERB_SYNONYMS,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::seeds;

/// Parameter value kind, stored lowercase in the JSONL encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Boolean,
    Enum,
}

/// One declared parameter of a tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolParam {
    pub name: String,
    pub type_tag: ParamType,
    pub required: bool,
    pub description: String,
}

/// A callable tool: the unit the selector chooses among.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSpec {
    pub id: String,
    pub name: String,
    pub domain: String,
    pub description: String,
    pub params: Vec<ToolParam>,
}

/// A user query labeled with the single tool that resolves it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    pub gold_tool_id: String,
    pub domain: String,
}

/// Requested size of one domain, and the stats row reported back for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainProfile {
    pub domain: String,
    pub tool_count: usize,
    pub query_count: usize,
}

/// Everything that can go wrong constructing, loading, or splitting a corpus.
#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate tool id {0:?}")]
    DuplicateToolId(String),
    #[error("duplicate tool name {name:?} in domain {domain:?}")]
    DuplicateToolName { domain: String, name: String },
    #[error("tool {0:?} has an empty description")]
    EmptyDescription(String),
    #[error("tool {tool:?} declares parameter {param:?} more than once")]
    DuplicateParamName { tool: String, param: String },
    #[error("duplicate query id {0:?}")]
    DuplicateQueryId(String),
    #[error("query {0:?} has empty text")]
    EmptyQueryText(String),
    #[error("query {query:?} references unknown gold tool {tool:?}")]
    UnknownGoldTool { query: String, tool: String },
    #[error("query {query:?} is in domain {query_domain:?} but its gold tool is in {tool_domain:?}")]
    DomainMismatch {
        query: String,
        query_domain: String,
        tool_domain: String,
    },
    #[error("profile for domain {domain:?} is invalid: {reason}")]
    InvalidProfile { domain: String, reason: String },
    #[error("duplicate domain {0:?} in profile list")]
    DuplicateProfileDomain(String),
    #[error("no template pool for domain {0:?}")]
    UnknownDomain(String),
    #[error("domain {domain:?} requests {requested} tools but its pool holds {capacity}")]
    PoolCapacity {
        domain: String,
        requested: usize,
        capacity: usize,
    },
    #[error("holdout fraction {0} is outside [0, 1)")]
    FractionOutOfRange(f64),
    #[error("domain {0:?} has a single tool; cannot hold one out")]
    SingleToolDomain(String),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One line of the JSONL encoding. The `kind` tag separates tool rows from
/// query rows so a single file carries both tables.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Tool(ToolSpec),
    Query(QueryRecord),
}

/// A validated corpus. Tools and queries are kept sorted by id, and lookup
/// maps are rebuilt at construction, never mutated afterwards.
#[derive(Debug, Clone)]
pub struct Corpus {
    tools: Vec<ToolSpec>,
    queries: Vec<QueryRecord>,
    tool_idx: HashMap<String, usize>,
    query_idx: HashMap<String, usize>,
    domain_tools: BTreeMap<String, Vec<usize>>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.tools == other.tools && self.queries == other.queries
    }
}

impl Corpus {
    /// Validates and indexes the given tables. Both are sorted by id, so the
    /// result is independent of input order.
    pub fn new(mut tools: Vec<ToolSpec>, mut queries: Vec<QueryRecord>) -> Result<Self, CorpusError> {
        tools.sort_by(|a, b| a.id.cmp(&b.id));
        queries.sort_by(|a, b| a.id.cmp(&b.id));

        let mut tool_idx = HashMap::with_capacity(tools.len());
        let mut names_per_domain: HashSet<(String, String)> = HashSet::new();
        let mut domain_tools: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, tool) in tools.iter().enumerate() {
            if tool_idx.insert(tool.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateToolId(tool.id.clone()));
            }
            if !names_per_domain.insert((tool.domain.clone(), tool.name.clone())) {
                return Err(CorpusError::DuplicateToolName {
                    domain: tool.domain.clone(),
                    name: tool.name.clone(),
                });
            }
            if tool.description.trim().is_empty() {
                return Err(CorpusError::EmptyDescription(tool.id.clone()));
            }
            let mut param_names = HashSet::new();
            for param in &tool.params {
                if !param_names.insert(param.name.as_str()) {
                    return Err(CorpusError::DuplicateParamName {
                        tool: tool.id.clone(),
                        param: param.name.clone(),
                    });
                }
            }
            domain_tools.entry(tool.domain.clone()).or_default().push(i);
        }

        let mut query_idx = HashMap::with_capacity(queries.len());
        for (i, query) in queries.iter().enumerate() {
            if query_idx.insert(query.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateQueryId(query.id.clone()));
            }
            if query.text.trim().is_empty() {
                return Err(CorpusError::EmptyQueryText(query.id.clone()));
            }
            let gold = tool_idx.get(&query.gold_tool_id).copied().ok_or_else(|| {
                CorpusError::UnknownGoldTool {
                    query: query.id.clone(),
                    tool: query.gold_tool_id.clone(),
                }
            })?;
            if tools[gold].domain != query.domain {
                return Err(CorpusError::DomainMismatch {
                    query: query.id.clone(),
                    query_domain: query.domain.clone(),
                    tool_domain: tools[gold].domain.clone(),
                });
            }
        }

        Ok(Self {
            tools,
            queries,
            tool_idx,
            query_idx,
            domain_tools,
        })
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    pub fn tool(&self, id: &str) -> Option<&ToolSpec> {
        self.tool_idx.get(id).map(|&i| &self.tools[i])
    }

    pub fn query(&self, id: &str) -> Option<&QueryRecord> {
        self.query_idx.get(id).map(|&i| &self.queries[i])
    }

    /// Tools of one domain, ordered by id. Empty for unknown domains.
    pub fn tools_in_domain(&self, domain: &str) -> impl Iterator<Item = &ToolSpec> {
        self.domain_tools
            .get(domain)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
            .iter()
            .map(|&i| &self.tools[i])
    }

    /// Domains present in the tool table, in sorted order.
    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.domain_tools.keys().map(|s| s.as_str())
    }
}

/// Serializes the corpus to its canonical JSONL form: all tool records
/// first, then all query records, each block ordered by id.
pub fn corpus_to_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for tool in corpus.tools() {
        let rec = Record::Tool(tool.clone());
        out.push_str(&serde_json::to_string(&rec).expect("tool record serializes"));
        out.push('\n');
    }
    for query in corpus.queries() {
        let rec = Record::Query(query.clone());
        out.push_str(&serde_json::to_string(&rec).expect("query record serializes"));
        out.push('\n');
    }
    out
}

/// SHA-256 of the canonical JSONL encoding, hex-encoded. Content-addressed:
/// equal corpora digest equally no matter where or how they were stored.
pub fn corpus_digest(corpus: &Corpus) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(corpus_to_jsonl(corpus).as_bytes());
    hex::encode(hasher.finalize())
}

/// Writes the canonical JSONL encoding to `path`.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    writer.write_all(corpus_to_jsonl(corpus).as_bytes())?;
    writer.flush()?;
    Ok(())
}

/// Reads a JSONL corpus, reporting malformed lines by 1-based line number
/// and integrity violations by record id.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut tools = Vec::new();
    let mut queries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let record: Record =
            serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
                line: i + 1,
                source,
            })?;
        match record {
            Record::Tool(tool) => tools.push(tool),
            Record::Query(query) => queries.push(query),
        }
    }
    Corpus::new(tools, queries)
}

/// Per-domain counts plus totals, rows sorted by domain name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub rows: Vec<DomainProfile>,
    pub total_tools: usize,
    pub total_queries: usize,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|r| r.domain.len())
            .chain(["domain".len(), "total".len()])
            .max()
            .unwrap_or(6);
        writeln!(f, "{:<width$}  {:>6}  {:>8}", "domain", "tools", "queries")?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<width$}  {:>6}  {:>8}",
                row.domain, row.tool_count, row.query_count
            )?;
        }
        write!(
            f,
            "{:<width$}  {:>6}  {:>8}",
            "total", self.total_tools, self.total_queries
        )
    }
}

/// Counts tools and queries per domain. Domains with tools but no queries
/// still get a row; the reverse cannot occur in a valid corpus.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut rows: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for tool in corpus.tools() {
        rows.entry(tool.domain.clone()).or_default().0 += 1;
    }
    for query in corpus.queries() {
        rows.entry(query.domain.clone()).or_default().1 += 1;
    }
    let rows: Vec<DomainProfile> = rows
        .into_iter()
        .map(|(domain, (tool_count, query_count))| DomainProfile {
            domain,
            tool_count,
            query_count,
        })
        .collect();
    CorpusStats {
        total_tools: rows.iter().map(|r| r.tool_count).sum(),
        total_queries: rows.iter().map(|r| r.query_count).sum(),
        rows,
    }
}

/// Splits a corpus into (train, test) along tool identity.
///
/// Per domain, `max(1, floor(fraction * tool_count))` tools are held out
/// (seeded, id-order stable). The train corpus drops the held-out tools and
/// every query labeled with them; the test corpus keeps the full tool table
/// so held-out tools can still appear as distractors, and carries exactly
/// the queries whose gold tool was held out. `fraction == 0` returns the
/// whole corpus as train and an empty test split.
pub fn split_unseen_tools(
    corpus: &Corpus,
    fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus), CorpusError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(CorpusError::FractionOutOfRange(fraction));
    }
    if fraction == 0.0 {
        let train = corpus.clone();
        let test = Corpus::new(corpus.tools().to_vec(), Vec::new())?;
        return Ok((train, test));
    }

    let mut held: HashSet<&str> = HashSet::new();
    for domain in corpus.domains() {
        let domain_tools: Vec<&ToolSpec> = corpus.tools_in_domain(domain).collect();
        if domain_tools.len() < 2 {
            return Err(CorpusError::SingleToolDomain(domain.to_string()));
        }
        // Tiny epsilon so fractions that are exact in decimal (0.3 * 10)
        // do not round down through float dust.
        let n_hold = ((fraction * domain_tools.len() as f64 + 1e-9).floor() as usize).max(1);
        let mut rng = seeds::rng_for_keyed(seed, "split", domain, 0);
        let picks = rand::seq::index::sample(&mut rng, domain_tools.len(), n_hold);
        for pick in picks.iter() {
            held.insert(domain_tools[pick].id.as_str());
        }
    }

    let train_tools: Vec<ToolSpec> = corpus
        .tools()
        .iter()
        .filter(|t| !held.contains(t.id.as_str()))
        .cloned()
        .collect();
    let mut train_queries = Vec::new();
    let mut test_queries = Vec::new();
    for query in corpus.queries() {
        if held.contains(query.gold_tool_id.as_str()) {
            test_queries.push(query.clone());
        } else {
            train_queries.push(query.clone());
        }
    }

    let train = Corpus::new(train_tools, train_queries)?;
    let test = Corpus::new(corpus.tools().to_vec(), test_queries)?;
    Ok((train, test))
}
