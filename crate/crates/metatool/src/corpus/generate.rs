//! Seeded corpus synthesis from the domain template pools.

use rand::Rng;

use super::templates::{
    domain_phrase, domain_slug, pool_for, synonyms_for, ENUM_VALUES, PARAM_ARCHETYPES,
    QUERY_TEMPLATES, STRING_VALUES,
};
use super::{Corpus, CorpusError, DomainProfile, ParamType, QueryRecord, ToolParam, ToolSpec};
use crate::seeds;

/// The domain sizes reported for the reference corpus: 155 tools and 9377
/// queries across seven domains.
pub fn paper_profile() -> Vec<DomainProfile> {
    [
        ("Office", 20, 1178),
        ("OS", 21, 1288),
        ("SD", 24, 1456),
        ("Edu", 26, 1548),
        ("DL", 20, 1262),
        ("IoT", 22, 1276),
        ("App", 22, 1369),
    ]
    .into_iter()
    .map(|(domain, tool_count, query_count)| DomainProfile {
        domain: domain.to_string(),
        tool_count,
        query_count,
    })
    .collect()
}

fn param_type_from_tag(tag: usize) -> ParamType {
    match tag {
        0 => ParamType::String,
        1 => ParamType::Integer,
        2 => ParamType::Boolean,
        _ => ParamType::Enum,
    }
}

fn article(noun: &str) -> &'static str {
    match noun.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Every tool gets the `target` parameter plus up to three sampled extras,
/// kept in archetype order so repeated runs agree byte for byte.
fn make_params<R: Rng>(rng: &mut R, object: &str) -> Vec<ToolParam> {
    let extra_count = rng.gen_range(0..=3);
    let mut picks: Vec<usize> = rand::seq::index::sample(rng, PARAM_ARCHETYPES.len() - 1, extra_count)
        .iter()
        .map(|i| i + 1)
        .collect();
    picks.sort_unstable();
    std::iter::once(0)
        .chain(picks)
        .map(|i| {
            let (name, tag, required, desc) = PARAM_ARCHETYPES[i];
            ToolParam {
                name: name.to_string(),
                type_tag: param_type_from_tag(tag),
                required,
                description: desc.replace("{object}", object),
            }
        })
        .collect()
}

fn describe_tool(verb: &str, object: &str, domain: &str, params: &[ToolParam]) -> String {
    let names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
    format!(
        "Use this tool to {verb} {} {object} {}. Accepts {} as input.",
        article(object),
        domain_phrase(domain),
        names.join(", ")
    )
}

/// One natural-language mention of a parameter with a concrete value.
fn argument_phrase<R: Rng>(rng: &mut R, param: &ToolParam) -> String {
    match param.type_tag {
        ParamType::String => format!(
            "use {} '{}{}'",
            param.name,
            STRING_VALUES[rng.gen_range(0..STRING_VALUES.len())],
            rng.gen_range(1..100)
        ),
        ParamType::Integer => format!("set {} to {}", param.name, rng.gen_range(1..=50)),
        ParamType::Boolean => format!(
            "with {} turned {}",
            param.name,
            if rng.gen_bool(0.5) { "on" } else { "off" }
        ),
        ParamType::Enum => format!(
            "with {} set to {}",
            param.name,
            ENUM_VALUES[rng.gen_range(0..ENUM_VALUES.len())]
        ),
    }
}

fn render_query<R: Rng>(rng: &mut R, verb: &str, object: &str, params: &[ToolParam]) -> String {
    // Half the queries keep the tool's own verb; the rest paraphrase it.
    let synonyms = synonyms_for(verb).expect("pool verbs are in the synonym table");
    let verb_form = match rng.gen_range(0..4u8) {
        0 | 1 => verb,
        2 => synonyms[0],
        _ => synonyms[1],
    };
    let template = QUERY_TEMPLATES[rng.gen_range(0..QUERY_TEMPLATES.len())];

    let arg_count = rng.gen_range(1..=2.min(params.len()));
    let arg_picks = rand::seq::index::sample(rng, params.len(), arg_count);
    let args = arg_picks
        .iter()
        .map(|i| argument_phrase(rng, &params[i]))
        .collect::<Vec<_>>()
        .join(" and ");

    template
        .replace("{Verb}", &capitalize(verb_form))
        .replace("{verb}", verb_form)
        .replace("{object}", object)
        .replace("{args}", &args)
}

/// Builds a corpus for the given domain profiles.
///
/// Pure in `(profiles, seed)`: each domain draws from its own keyed RNG
/// stream, so neither profile order nor other domains' sizes perturb a
/// domain's output. Queries are assigned to tools round-robin, giving
/// every tool within `±1` of the mean query load.
pub fn generate_corpus(profiles: &[DomainProfile], seed: u64) -> Result<Corpus, CorpusError> {
    let mut seen = std::collections::HashSet::new();
    for profile in profiles {
        if !seen.insert(profile.domain.as_str()) {
            return Err(CorpusError::DuplicateProfileDomain(profile.domain.clone()));
        }
        if profile.tool_count == 0 && profile.query_count > 0 {
            return Err(CorpusError::InvalidProfile {
                domain: profile.domain.clone(),
                reason: format!(
                    "{} queries requested but no tools to label them with",
                    profile.query_count
                ),
            });
        }
    }

    let mut tools = Vec::new();
    let mut queries = Vec::new();
    for profile in profiles {
        if profile.tool_count == 0 {
            continue;
        }
        let pool = pool_for(&profile.domain)
            .ok_or_else(|| CorpusError::UnknownDomain(profile.domain.clone()))?;
        if profile.tool_count > pool.len() {
            return Err(CorpusError::PoolCapacity {
                domain: profile.domain.clone(),
                requested: profile.tool_count,
                capacity: pool.len(),
            });
        }
        let slug = domain_slug(&profile.domain);
        let mut rng = seeds::rng_for_keyed(seed, "corpus", &profile.domain, 0);

        let mut picks: Vec<usize> =
            rand::seq::index::sample(&mut rng, pool.len(), profile.tool_count).into_vec();
        picks.sort_unstable();

        let mut domain_tools = Vec::with_capacity(profile.tool_count);
        for (ti, &pick) in picks.iter().enumerate() {
            let (verb, object) = pool[pick];
            let params = make_params(&mut rng, object);
            let description = describe_tool(verb, object, &profile.domain, &params);
            domain_tools.push((verb, object, ti));
            tools.push(ToolSpec {
                id: format!("{slug}-t{ti:03}"),
                name: format!("{verb}_{object}"),
                domain: profile.domain.clone(),
                description,
                params,
            });
        }

        let base = tools.len() - profile.tool_count;
        for qi in 0..profile.query_count {
            let (verb, object, ti) = domain_tools[qi % profile.tool_count];
            let tool = &tools[base + ti];
            let text = render_query(&mut rng, verb, object, &tool.params);
            queries.push(QueryRecord {
                id: format!("{slug}-q{qi:05}"),
                text,
                gold_tool_id: tool.id.clone(),
                domain: profile.domain.clone(),
            });
        }
    }

    Corpus::new(tools, queries)
}
