//! Format-checked selection evaluation, the lexical baseline, per-domain
//! reports, and the seen/unseen generalization-gap diagnostic.
//!
//! A selection counts as correct only when both criteria hold: the output
//! parses under the exact grammar AND the named tool is the gold tool.
//! The grammar is `{"tool": "<name>"}` — one JSON object, one key, string
//! value, nothing around it but whitespace. Tool-selection papers describe
//! format adherence without printing their template, so this grammar is a
//! stand-in; it is deliberately strict so the criterion is binary.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::model::{forward, predict, FeatureCache, SelectorParams};
use crate::sampler::Task;

/// Raw text emitted by a selector. Arbitrary text is admissible; judging
/// it is `validate_and_parse`'s job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionOutput {
    pub raw_text: String,
}

impl SelectionOutput {
    pub fn new(raw_text: impl Into<String>) -> Self {
        Self {
            raw_text: raw_text.into(),
        }
    }
}

/// What `validate_and_parse` can decide on its own, before the gold
/// comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseOutcome {
    /// Format-valid and the name is among the candidates.
    Valid(String),
    /// Format-valid but the name is not a candidate.
    Hallucinated(String),
    /// Anything else: prose, truncation, extra keys, wrong key, non-string.
    FormatError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeCategory {
    Correct,
    WrongTool,
    HallucinatedTool,
    FormatError,
}

/// Judged episode. `selected_name` is present exactly when the output was
/// format-valid (correct, wrong_tool, hallucinated_tool).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub category: OutcomeCategory,
    pub selected_name: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeCounts {
    pub correct: u64,
    pub wrong_tool: u64,
    pub hallucinated_tool: u64,
    pub format_error: u64,
}

impl OutcomeCounts {
    pub fn total(&self) -> u64 {
        self.correct + self.wrong_tool + self.hallucinated_tool + self.format_error
    }

    fn bump(&mut self, category: OutcomeCategory) {
        match category {
            OutcomeCategory::Correct => self.correct += 1,
            OutcomeCategory::WrongTool => self.wrong_tool += 1,
            OutcomeCategory::HallucinatedTool => self.hallucinated_tool += 1,
            OutcomeCategory::FormatError => self.format_error += 1,
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.correct += other.correct;
        self.wrong_tool += other.wrong_tool;
        self.hallucinated_tool += other.hallucinated_tool;
        self.format_error += other.format_error;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainRow {
    pub n: u64,
    pub accuracy: f64,
}

/// Aggregated evaluation result. Invariants: outcome counts sum to the
/// episode count, per-domain n sums to the episode count, and
/// overall_accuracy = correct / total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub per_domain: BTreeMap<String, DomainRow>,
    pub overall_accuracy: f64,
    pub outcome_counts: OutcomeCounts,
    pub generalization_gap: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("task references unknown tool id {0:?}")]
    UnknownTool(String),
    #[error("task references unknown query id {0:?}")]
    UnknownQuery(String),
    #[error("invalid episode: {0}")]
    Episode(String),
    #[error("episode set is empty")]
    EmptyEpisodes,
    #[error("no reports to compare")]
    NoReports,
    #[error("report file has no overall record")]
    MissingOverall,
    #[error("report file line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scores the task's candidates and emits the argmax candidate's name in
/// the exact selection grammar. Ties break toward the lowest index.
pub fn emit_selection(
    params: &SelectorParams,
    cache: &FeatureCache,
    task: &Task,
    corpus: &Corpus,
) -> Result<SelectionOutput, EvalError> {
    let inputs: Vec<_> = task
        .candidates
        .iter()
        .map(|id| {
            cache
                .input_for(&task.query_id, id)
                .ok_or_else(|| EvalError::UnknownTool(id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let picked = predict(&forward(params, &inputs).logits);
    let id = &task.candidates[picked];
    let tool = corpus
        .tool(id)
        .ok_or_else(|| EvalError::UnknownTool(id.clone()))?;
    Ok(selection_for_name(&tool.name))
}

/// The one place the output grammar is written down.
fn selection_for_name(name: &str) -> SelectionOutput {
    SelectionOutput::new(format!(
        "{{\"tool\": {}}}",
        serde_json::to_string(name).expect("strings always serialize")
    ))
}

/// Applies the exact-format rule: after trimming surrounding whitespace the
/// text must be one JSON object with the single key "tool" and a string
/// value. Every deviation is a format error, never a fault.
pub fn validate_and_parse(output: &SelectionOutput, candidate_names: &[&str]) -> ParseOutcome {
    let trimmed = output.raw_text.trim();
    let value: serde_json::Value = match serde_json::from_str(trimmed) {
        Ok(v) => v,
        Err(_) => return ParseOutcome::FormatError,
    };
    let object = match value.as_object() {
        Some(o) if o.len() == 1 => o,
        _ => return ParseOutcome::FormatError,
    };
    let name = match object.get("tool").and_then(|v| v.as_str()) {
        Some(n) => n,
        None => return ParseOutcome::FormatError,
    };
    if candidate_names.contains(&name) {
        ParseOutcome::Valid(name.to_string())
    } else {
        ParseOutcome::Hallucinated(name.to_string())
    }
}

/// Full judgment for one episode: format rule, then gold comparison.
pub fn judge(output: &SelectionOutput, candidate_names: &[&str], gold_name: &str) -> EvalOutcome {
    match validate_and_parse(output, candidate_names) {
        ParseOutcome::FormatError => EvalOutcome {
            category: OutcomeCategory::FormatError,
            selected_name: None,
        },
        ParseOutcome::Hallucinated(name) => EvalOutcome {
            category: OutcomeCategory::HallucinatedTool,
            selected_name: Some(name),
        },
        ParseOutcome::Valid(name) => EvalOutcome {
            category: if name == gold_name {
                OutcomeCategory::Correct
            } else {
                OutcomeCategory::WrongTool
            },
            selected_name: Some(name),
        },
    }
}

struct EpisodeCtx<'a> {
    task: &'a Task,
    domain: &'a str,
    names: Vec<&'a str>,
    gold_name: &'a str,
}

fn resolve_episodes<'a>(
    episodes: &'a [Task],
    corpus: &'a Corpus,
) -> Result<Vec<EpisodeCtx<'a>>, EvalError> {
    episodes
        .iter()
        .map(|task| {
            task.validate(corpus).map_err(EvalError::Episode)?;
            let query = corpus
                .query(&task.query_id)
                .ok_or_else(|| EvalError::UnknownQuery(task.query_id.clone()))?;
            let names: Vec<&str> = task
                .candidates
                .iter()
                .map(|id| {
                    corpus
                        .tool(id)
                        .map(|t| t.name.as_str())
                        .ok_or_else(|| EvalError::UnknownTool(id.clone()))
                })
                .collect::<Result<_, _>>()?;
            let gold_name = names[task.gold_index];
            Ok(EpisodeCtx {
                task,
                domain: query.domain.as_str(),
                names,
                gold_name,
            })
        })
        .collect()
}

/// Evaluates a selector over the episodes. Episodes are independent, so
/// they run in parallel; aggregation is commutative integer counting and
/// the report is exactly order-independent. The `METATOOL_THREADS`
/// environment variable caps the worker count.
pub fn evaluate<F>(selector: F, episodes: &[Task], corpus: &Corpus) -> Result<EvalReport, EvalError>
where
    F: Fn(&Task) -> SelectionOutput + Sync,
{
    let contexts = resolve_episodes(episodes, corpus)?;

    type Tally = (OutcomeCounts, BTreeMap<String, (u64, u64)>);
    let run = || -> Tally {
        contexts
            .par_iter()
            .map(|ctx| {
                let outcome = judge(&selector(ctx.task), &ctx.names, ctx.gold_name);
                (ctx.domain, outcome.category)
            })
            .fold(Tally::default, |(mut counts, mut domains), (domain, category)| {
                counts.bump(category);
                let row = domains.entry(domain.to_string()).or_insert((0, 0));
                row.1 += 1;
                if category == OutcomeCategory::Correct {
                    row.0 += 1;
                }
                (counts, domains)
            })
            .reduce(Tally::default, |(ca, mut da), (cb, db)| {
                for (domain, (correct, n)) in db {
                    let row = da.entry(domain).or_insert((0, 0));
                    row.0 += correct;
                    row.1 += n;
                }
                (ca.merge(cb), da)
            })
    };
    let (counts, domains) = match configured_pool() {
        Some(pool) => pool.install(run),
        None => run(),
    };

    let total = counts.total();
    let per_domain = domains
        .into_iter()
        .map(|(domain, (correct, n))| {
            (
                domain,
                DomainRow {
                    n,
                    accuracy: correct as f64 / n as f64,
                },
            )
        })
        .collect();
    Ok(EvalReport {
        per_domain,
        overall_accuracy: if total == 0 {
            0.0
        } else {
            counts.correct as f64 / total as f64
        },
        outcome_counts: counts,
        generalization_gap: None,
    })
}

/// Builds a rayon pool honoring `METATOOL_THREADS`, or `None` to use the
/// global default.
fn configured_pool() -> Option<rayon::ThreadPool> {
    let threads: usize = std::env::var("METATOOL_THREADS").ok()?.parse().ok()?;
    if threads == 0 {
        return None;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .ok()
}

/// Untrained baseline: picks the candidate whose name-plus-description
/// shares the most distinct lowercase whitespace tokens with the query
/// text. Ties break toward the lowest index.
pub fn baseline_lexical(task: &Task, corpus: &Corpus) -> Result<SelectionOutput, EvalError> {
    let query = corpus
        .query(&task.query_id)
        .ok_or_else(|| EvalError::UnknownQuery(task.query_id.clone()))?;
    let query_tokens: BTreeSet<String> = tokens(&query.text);

    let mut best_name = "";
    let mut best_overlap = 0usize;
    for (index, id) in task.candidates.iter().enumerate() {
        let tool = corpus
            .tool(id)
            .ok_or_else(|| EvalError::UnknownTool(id.clone()))?;
        let candidate_tokens = tokens(&format!("{} {}", tool.name, tool.description));
        let overlap = candidate_tokens
            .iter()
            .filter(|t| query_tokens.contains(*t))
            .count();
        if index == 0 || overlap > best_overlap {
            best_overlap = overlap;
            best_name = &tool.name;
        }
    }
    Ok(selection_for_name(best_name))
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect()
}

/// Accuracy on episodes whose gold tools were trained on, minus accuracy on
/// episodes whose gold tools were held out. Positive gap = memorization.
pub fn generalization_gap_with<F>(
    selector: F,
    seen_episodes: &[Task],
    unseen_episodes: &[Task],
    corpus: &Corpus,
) -> Result<f64, EvalError>
where
    F: Fn(&Task) -> SelectionOutput + Sync,
{
    if seen_episodes.is_empty() || unseen_episodes.is_empty() {
        return Err(EvalError::EmptyEpisodes);
    }
    let seen = evaluate(&selector, seen_episodes, corpus)?;
    let unseen = evaluate(&selector, unseen_episodes, corpus)?;
    Ok(seen.overall_accuracy - unseen.overall_accuracy)
}

/// `generalization_gap_with` for the trained selector.
pub fn generalization_gap(
    params: &SelectorParams,
    cache: &FeatureCache,
    seen_episodes: &[Task],
    unseen_episodes: &[Task],
    corpus: &Corpus,
) -> Result<f64, EvalError> {
    generalization_gap_with(
        |task| {
            emit_selection(params, cache, task, corpus)
                .unwrap_or_else(|_| SelectionOutput::new(""))
        },
        seen_episodes,
        unseen_episodes,
        corpus,
    )
}

// ---------------------------------------------------------------------------
// Report rendering and IO

/// One line of the machine-readable report stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReportRecord {
    Overall {
        accuracy: f64,
        counts: OutcomeCounts,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        generalization_gap: Option<f64>,
    },
    Domain {
        domain: String,
        n: u64,
        accuracy: f64,
    },
}

pub fn report_records(report: &EvalReport) -> Vec<ReportRecord> {
    let mut records = vec![ReportRecord::Overall {
        accuracy: report.overall_accuracy,
        counts: report.outcome_counts,
        generalization_gap: report.generalization_gap,
    }];
    for (domain, row) in &report.per_domain {
        records.push(ReportRecord::Domain {
            domain: domain.clone(),
            n: row.n,
            accuracy: row.accuracy,
        });
    }
    records
}

pub fn save_report(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in report_records(report) {
        serde_json::to_writer(&mut file, &record).map_err(std::io::Error::from)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<EvalReport, EvalError> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut overall = None;
    let mut per_domain = BTreeMap::new();
    for (index, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ReportRecord =
            serde_json::from_str(&line).map_err(|source| EvalError::Parse {
                line: index + 1,
                source,
            })?;
        match record {
            ReportRecord::Overall {
                accuracy,
                counts,
                generalization_gap,
            } => overall = Some((accuracy, counts, generalization_gap)),
            ReportRecord::Domain {
                domain,
                n,
                accuracy,
            } => {
                per_domain.insert(domain, DomainRow { n, accuracy });
            }
        }
    }
    let (overall_accuracy, outcome_counts, generalization_gap) =
        overall.ok_or(EvalError::MissingOverall)?;
    Ok(EvalReport {
        per_domain,
        overall_accuracy,
        outcome_counts,
        generalization_gap,
    })
}

/// Human-readable report.
pub fn report_text(report: &EvalReport) -> String {
    let counts = &report.outcome_counts;
    let mut out = format!(
        "overall accuracy {:.4}  ({}/{})\noutcomes         correct {}  wrong_tool {}  hallucinated_tool {}  format_error {}\n",
        report.overall_accuracy,
        counts.correct,
        counts.total(),
        counts.correct,
        counts.wrong_tool,
        counts.hallucinated_tool,
        counts.format_error,
    );
    if let Some(gap) = report.generalization_gap {
        out.push_str(&format!("generalization gap {:+.4}\n", gap));
    }
    if !report.per_domain.is_empty() {
        let width = report
            .per_domain
            .keys()
            .map(|d| d.len())
            .max()
            .unwrap()
            .max("domain".len());
        out.push_str(&format!("{:width$}  {:>6}  accuracy\n", "domain", "n"));
        for (domain, row) in &report.per_domain {
            out.push_str(&format!(
                "{:width$}  {:>6}  {:.4}\n",
                domain, row.n, row.accuracy
            ));
        }
    }
    out
}

/// One row of a side-by-side comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRow {
    pub label: String,
    pub overall: f64,
    pub per_domain: BTreeMap<String, f64>,
    /// True when this row attains the column maximum for overall accuracy;
    /// ties flag every row that attains it.
    pub best_overall: bool,
    /// Domains where this row attains the column maximum.
    pub best_in: Vec<String>,
}

/// Machine-readable comparison: one row per report, column maxima flagged.
pub fn compare_rows(named: &[(String, EvalReport)]) -> Result<Vec<CompareRow>, EvalError> {
    if named.is_empty() {
        return Err(EvalError::NoReports);
    }
    let domains: BTreeSet<&str> = named
        .iter()
        .flat_map(|(_, r)| r.per_domain.keys().map(String::as_str))
        .collect();

    let best_overall = named
        .iter()
        .map(|(_, r)| r.overall_accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let best_for: BTreeMap<&str, f64> = domains
        .iter()
        .map(|&d| {
            let best = named
                .iter()
                .filter_map(|(_, r)| r.per_domain.get(d).map(|row| row.accuracy))
                .fold(f64::NEG_INFINITY, f64::max);
            (d, best)
        })
        .collect();

    Ok(named
        .iter()
        .map(|(label, report)| {
            let per_domain: BTreeMap<String, f64> = report
                .per_domain
                .iter()
                .map(|(d, row)| (d.clone(), row.accuracy))
                .collect();
            let best_in = per_domain
                .iter()
                .filter(|(d, acc)| **acc == best_for[d.as_str()])
                .map(|(d, _)| d.clone())
                .collect();
            CompareRow {
                label: label.clone(),
                overall: report.overall_accuracy,
                per_domain,
                best_overall: report.overall_accuracy == best_overall,
                best_in,
            }
        })
        .collect())
}

/// Aligned-text comparison table; `*` marks column maxima.
pub fn render_comparison(rows: &[CompareRow]) -> String {
    let domains: BTreeSet<&str> = rows
        .iter()
        .flat_map(|r| r.per_domain.keys().map(String::as_str))
        .collect();
    let label_width = rows
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(0)
        .max("method".len());
    let column = |text: &str| format!("{:>9}", text);

    let mut out = format!("{:label_width$}  {}", "method", column("overall"));
    for domain in &domains {
        let header: String = domain.chars().take(9).collect();
        out.push_str(&format!("  {}", column(&header)));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{:label_width$}", row.label));
        let flag = if row.best_overall { "*" } else { " " };
        out.push_str(&format!("  {}", column(&format!("{:.4}{flag}", row.overall))));
        for domain in &domains {
            match row.per_domain.get(*domain) {
                Some(acc) => {
                    let flag = if row.best_in.iter().any(|d| d == domain) {
                        "*"
                    } else {
                        " "
                    };
                    out.push_str(&format!("  {}", column(&format!("{acc:.4}{flag}"))));
                }
                None => out.push_str(&format!("  {}", column("-"))),
            }
        }
        out.push('\n');
    }
    out
}
