use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::expand::{expand_prompts, InjectionOutcome, PromptExpansion};
use super::extract::{extract_attributes, merge_concept_attributes, AttributeExtraction, AttributeFilter};
use super::seeds::{select_seed_prompts, DEFAULT_EXCLUSIONS};
use super::tagger::NounTagger;
use super::{CaptionRecord, PromptgenError, SeedPrompt};
use crate::adapters::{bounded_map, LlmClient};
use crate::catalog::{BenchmarkDataset, CoarsePrompt, Concept, DensePrompt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuilderConfig {
    pub seeds_per_concept: usize,
    pub rng_seed: u64,
    pub exclusion_words: Vec<String>,
    pub filter: AttributeFilter,
    /// Keep going with fewer seeds (or none) when a concept lacks captions.
    pub allow_partial: bool,
    pub max_concurrency: usize,
    /// Recorded in the dataset metadata.
    pub source_corpus: Option<String>,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self {
            seeds_per_concept: 31,
            rng_seed: 0,
            exclusion_words: DEFAULT_EXCLUSIONS.iter().map(|s| s.to_string()).collect(),
            filter: AttributeFilter::default(),
            allow_partial: false,
            max_concurrency: 4,
            source_corpus: None,
        }
    }
}

/// Bookkeeping for one concept.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptBuildReport {
    pub concept: String,
    pub seeds_selected: usize,
    pub protocol_errors: usize,
    pub subject_mismatches: usize,
    pub coarse_leakages: usize,
    pub coarse_missing_concept: usize,
    pub attribute_types: usize,
    pub coarse_prompts: usize,
    pub injections_requested: usize,
    pub skipped: usize,
    pub rejected: usize,
    pub unknown_attributes: usize,
    /// Dense prompts removed because their type ended up with one attribute.
    pub pruned_dense: usize,
    pub dense_prompts: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub concepts: Vec<ConceptBuildReport>,
}

impl BuildReport {
    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.concepts.iter().flat_map(|c| c.warnings.iter().map(String::as_str))
    }

    pub fn total(&self, field: impl Fn(&ConceptBuildReport) -> usize) -> usize {
        self.concepts.iter().map(field).sum()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain JSON") + "\n"
    }
}

fn id_stem(concept: &str) -> String {
    concept.split_whitespace().collect::<Vec<_>>().join("_")
}

/// Files a recoverable per-seed error in the report; fatal errors are returned.
fn tally(report: &mut ConceptBuildReport, err: PromptgenError) -> Result<(), PromptgenError> {
    if err.is_fatal() {
        return Err(err);
    }
    match &err {
        PromptgenError::LlmProtocol { .. } | PromptgenError::Backend(_) => report.protocol_errors += 1,
        PromptgenError::SubjectMismatch { .. } => report.subject_mismatches += 1,
        PromptgenError::CoarseLeakage { .. } => report.coarse_leakages += 1,
        PromptgenError::CoarseMissingConcept { .. } => report.coarse_missing_concept += 1,
        _ => return Err(err),
    }
    log::warn!("{}: seed dropped: {err}", report.concept);
    Ok(())
}

struct ConceptOutput {
    concept: Concept,
    coarse: Vec<CoarsePrompt>,
    dense: Vec<DensePrompt>,
}

fn build_concept(
    corpus: &[CaptionRecord],
    name: &str,
    config: &BuilderConfig,
    llm: &LlmClient,
    tagger: &dyn NounTagger,
    report: &mut ConceptBuildReport,
) -> Result<Option<ConceptOutput>, PromptgenError> {
    let seeds = match select_seed_prompts(
        corpus,
        name,
        config.seeds_per_concept,
        config.rng_seed,
        tagger,
        &config.exclusion_words,
    ) {
        Ok(s) => s,
        Err(PromptgenError::InsufficientCaptions { needed, available, .. }) if config.allow_partial => {
            report
                .warnings
                .push(format!("{name}: only {available} of {needed} seed captions available"));
            if available == 0 {
                return Ok(None);
            }
            select_seed_prompts(
                corpus,
                name,
                available,
                config.rng_seed,
                tagger,
                &config.exclusion_words,
            )?
        }
        Err(e) => return Err(e),
    };
    report.seeds_selected = seeds.len();

    let extracted = bounded_map(&seeds, config.max_concurrency, |s| extract_attributes(s, llm));
    let mut extractions: Vec<AttributeExtraction> = Vec::new();
    for r in extracted {
        match r {
            Ok(e) => extractions.push(e),
            Err(e) => tally(report, e)?,
        }
    }
    let types = merge_concept_attributes(&extractions, &config.filter);
    report.attribute_types = types.len();
    if types.is_empty() {
        report
            .warnings
            .push(format!("{name}: no attribute type kept two or more attributes"));
        return Ok(None);
    }

    let usable: Vec<SeedPrompt> = extractions.into_iter().map(|e| e.seed).collect();
    let expanded = bounded_map(&usable, config.max_concurrency, |s| expand_prompts(s, &types, llm));
    let mut expansions: Vec<PromptExpansion> = Vec::new();
    for r in expanded {
        match r {
            Ok(e) => expansions.push(e),
            Err(e) => tally(report, e)?,
        }
    }
    if expansions.is_empty() {
        report.warnings.push(format!("{name}: every seed was dropped"));
        return Ok(None);
    }

    let stem = id_stem(name);
    let mut coarse = Vec::new();
    let mut dense = Vec::new();
    for (ci, e) in expansions.iter().enumerate() {
        let coarse_id = format!("{stem}-cp-{:03}", ci + 1);
        report.injections_requested += e.injections.len();
        report.skipped += e.count(|o| matches!(o, InjectionOutcome::Skipped));
        report.rejected += e.count(|o| matches!(o, InjectionOutcome::Rejected { .. }));
        report.unknown_attributes += e.unknown_attributes;
        for (inj, text) in e.dense() {
            dense.push(DensePrompt {
                id: String::new(),
                coarse_id: coarse_id.clone(),
                concept: name.to_string(),
                attribute_type: inj.attribute_type.clone(),
                attribute: inj.attribute.clone(),
                text: text.to_string(),
            });
        }
        coarse.push(CoarsePrompt {
            id: coarse_id,
            concept: name.to_string(),
            text: e.coarse_text.clone(),
            seed_caption: Some(e.seed.caption.clone()),
        });
    }

    let mut represented: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for d in &dense {
        represented.entry(&d.attribute_type).or_default().insert(&d.attribute);
    }
    let thin: BTreeSet<String> = represented
        .into_iter()
        .filter(|(_, a)| a.len() < 2)
        .map(|(t, _)| t.to_string())
        .collect();
    let before = dense.len();
    dense.retain(|d| !thin.contains(&d.attribute_type));
    report.pruned_dense = before - dense.len();
    for t in &thin {
        report.warnings.push(format!(
            "{name}/{t}: dense prompts cover fewer than two attributes; dropped"
        ));
    }
    for (i, d) in dense.iter_mut().enumerate() {
        d.id = format!("{stem}-dp-{:04}", i + 1);
    }
    report.coarse_prompts = coarse.len();
    report.dense_prompts = dense.len();
    Ok(Some(ConceptOutput {
        concept: Concept::new(name, types),
        coarse,
        dense,
    }))
}

/// Runs seed selection, attribute extraction, merging and prompt expansion
/// for each concept, then validates the assembled dataset.
///
/// Per-seed LLM failures drop the seed and are counted in the report.
/// Concepts that end up empty are left out with a warning.
pub fn build_dataset(
    corpus: &[CaptionRecord],
    concepts: &[String],
    config: &BuilderConfig,
    llm: &LlmClient,
    tagger: &dyn NounTagger,
) -> Result<(BenchmarkDataset, BuildReport), PromptgenError> {
    let mut dataset = BenchmarkDataset {
        metadata: BTreeMap::new(),
        concepts: Vec::new(),
        coarse_prompts: Vec::new(),
        dense_prompts: Vec::new(),
    };
    let mut report = BuildReport::default();
    for name in concepts {
        let mut cr = ConceptBuildReport {
            concept: name.clone(),
            ..Default::default()
        };
        if let Some(out) = build_concept(corpus, name, config, llm, tagger, &mut cr)? {
            dataset.concepts.push(out.concept);
            dataset.coarse_prompts.extend(out.coarse);
            dataset.dense_prompts.extend(out.dense);
        }
        report.concepts.push(cr);
    }
    if dataset.coarse_prompts.is_empty() {
        return Err(PromptgenError::EmptyDataset);
    }
    let meta = &mut dataset.metadata;
    meta.insert("builder_version".into(), json!(env!("CARGO_PKG_VERSION")));
    meta.insert("rng_seed".into(), json!(config.rng_seed));
    meta.insert("seeds_per_concept".into(), json!(config.seeds_per_concept));
    if let Some(src) = &config.source_corpus {
        meta.insert("source_corpus".into(), json!(src));
    }
    dataset.validate()?;
    Ok((dataset, report))
}
