//! Dataset construction from a caption corpus: seed selection, LLM attribute
//! extraction, attribute grouping, and coarse/dense prompt rewriting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::AdapterError;
use crate::catalog::ValidationError;
use crate::io::{read_jsonl, JsonlError};

mod build;
mod expand;
mod extract;
pub mod knowledge;
mod seeds;
pub mod tagger;

pub use build::{build_dataset, BuildReport, BuilderConfig, ConceptBuildReport};
pub use expand::{expand_prompts, Injection, InjectionOutcome, PromptExpansion};
pub use extract::{extract_attributes, merge_concept_attributes, AttributeExtraction, AttributeFilter};
pub use knowledge::{KnowledgeBase, KnowledgeLlm};
pub use seeds::{select_seed_prompts, DEFAULT_EXCLUSIONS};
pub use tagger::{HeuristicTagger, NounTagger};

#[derive(Debug, thiserror::Error)]
pub enum PromptgenError {
    #[error("concept {concept:?}: only {available} usable captions, {needed} requested")]
    InsufficientCaptions {
        concept: String,
        needed: usize,
        available: usize,
    },
    #[error("LLM reply could not be used: {message}")]
    LlmProtocol { message: String, raw_reply: String },
    #[error("LLM names {found:?} as the main subject, expected {expected:?}")]
    SubjectMismatch { expected: String, found: String },
    #[error("coarse prompt {text:?} still mentions attribute {attribute:?}")]
    CoarseLeakage { text: String, attribute: String },
    #[error("coarse prompt {text:?} does not mention {concept:?}")]
    CoarseMissingConcept { text: String, concept: String },
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("no attribute types to expand")]
    NoAttributeTypes,
    #[error("no concept produced any prompts")]
    EmptyDataset,
    #[error(transparent)]
    Backend(#[from] AdapterError),
    #[error("built dataset is invalid: {0}")]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Corpus(#[from] JsonlError),
}

impl PromptgenError {
    /// Errors that end the whole build rather than one seed or concept.
    pub fn is_fatal(&self) -> bool {
        match self {
            PromptgenError::Backend(e) => e.is_fatal() || matches!(e, AdapterError::Template(_)),
            PromptgenError::Validation(_)
            | PromptgenError::Corpus(_)
            | PromptgenError::Config { .. }
            | PromptgenError::EmptyDataset => true,
            _ => false,
        }
    }
}

/// One line of a caption corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRecord {
    pub id: String,
    pub caption: String,
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>, PromptgenError> {
    Ok(read_jsonl(path)?)
}

/// A corpus caption chosen to seed prompts for a concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPrompt {
    pub concept: String,
    pub caption: String,
    pub source_id: String,
}

/// Pulls the first JSON object out of an LLM reply, tolerating code fences
/// and chatter around it.
pub(crate) fn parse_json_reply<T: serde::de::DeserializeOwned>(reply: &str) -> Result<T, PromptgenError> {
    let protocol = |message: String| PromptgenError::LlmProtocol {
        message,
        raw_reply: reply.to_string(),
    };
    let start = reply
        .find('{')
        .ok_or_else(|| protocol("reply contains no JSON object".into()))?;
    let mut stream = serde_json::Deserializer::from_str(&reply[start..]).into_iter::<serde_json::Value>();
    let value = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => return Err(protocol(format!("malformed JSON: {e}"))),
        None => return Err(protocol("reply contains no JSON object".into())),
    };
    serde_json::from_value(value).map_err(|e| protocol(format!("unexpected JSON shape: {e}")))
}

/// Lower-cased, trimmed, with `_`/`-` read as spaces; used to compare type names.
pub(crate) fn normalize_type(name: &str) -> String {
    name.trim()
        .to_lowercase()
        .replace(['_', '-'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}
