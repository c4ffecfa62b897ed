use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{normalize_type, parse_json_reply, PromptgenError, SeedPrompt};
use crate::adapters::llm::ATTRIBUTE_EXTRACTION;
use crate::adapters::LlmClient;
use crate::catalog::AttributeType;
use crate::text::{mentions_concept, singularize, tokenize};

/// Attributes an LLM found in one seed caption, and plausible alternatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeExtraction {
    pub seed: SeedPrompt,
    /// Type -> attribute(s) already present in the caption.
    pub existing: BTreeMap<String, Vec<String>>,
    /// Type -> plausible attributes, always including the existing ones.
    pub candidates: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct ExtractionReply {
    #[serde(default)]
    #[allow(dead_code)]
    caption: Option<String>,
    main_subject: String,
    visual_modifiers: VisualModifiers,
}

#[derive(Debug, Deserialize)]
struct VisualModifiers {
    #[serde(default)]
    existing: BTreeMap<String, Value>,
    #[serde(default)]
    possible_attributes: BTreeMap<String, Value>,
}

/// Strings, numbers, or lists of them; anything else breaks the schema.
fn strings(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::String(s) => Some(vec![s.clone()]),
        Value::Number(n) => Some(vec![n.to_string()]),
        Value::Null => Some(vec![]),
        Value::Array(items) => items
            .iter()
            .map(|i| match i {
                Value::String(s) => Some(s.clone()),
                Value::Number(n) => Some(n.to_string()),
                _ => None,
            })
            .collect(),
        _ => None,
    }
}

fn subject_matches(subject: &str, concept: &str) -> bool {
    if mentions_concept(subject, concept) {
        return true;
    }
    let s: Vec<String> = tokenize(subject).iter().map(|t| singularize(t)).collect();
    let c: Vec<String> = tokenize(concept).iter().map(|t| singularize(t)).collect();
    !c.is_empty() && s.ends_with(&c)
}

fn parse_extraction(seed: &SeedPrompt, reply: &str) -> Result<AttributeExtraction, PromptgenError> {
    let parsed: ExtractionReply = parse_json_reply(reply)?;
    if !subject_matches(&parsed.main_subject, &seed.concept) {
        return Err(PromptgenError::SubjectMismatch {
            expected: seed.concept.clone(),
            found: parsed.main_subject,
        });
    }
    let schema = |field: &str, ty: &str| PromptgenError::LlmProtocol {
        message: format!("visual_modifiers.{field}.{ty} is not a string or list of strings"),
        raw_reply: reply.to_string(),
    };
    let mut existing = BTreeMap::new();
    for (ty, v) in &parsed.visual_modifiers.existing {
        let vals = strings(v).ok_or_else(|| schema("existing", ty))?;
        let vals: Vec<String> = vals
            .into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if !vals.is_empty() {
            existing.insert(ty.trim().to_string(), vals);
        }
    }
    let mut candidates: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (ty, v) in &parsed.visual_modifiers.possible_attributes {
        let vals = strings(v).ok_or_else(|| schema("possible_attributes", ty))?;
        let entry = candidates.entry(ty.trim().to_string()).or_default();
        for s in vals {
            let s = s.trim().to_string();
            if !s.is_empty() && !entry.contains(&s) {
                entry.push(s);
            }
        }
    }
    for (ty, vals) in &existing {
        let entry = candidates.entry(ty.clone()).or_default();
        for v in vals {
            if !entry.iter().any(|e| e.eq_ignore_ascii_case(v)) {
                entry.push(v.clone());
            }
        }
    }
    candidates.retain(|_, v| !v.is_empty());
    Ok(AttributeExtraction {
        seed: seed.clone(),
        existing,
        candidates,
    })
}

/// Asks the LLM for the caption's visual attributes and alternatives. A reply
/// that cannot be parsed is retried once.
pub fn extract_attributes(seed: &SeedPrompt, llm: &LlmClient) -> Result<AttributeExtraction, PromptgenError> {
    let subs = BTreeMap::from([("seed_prompt".to_string(), seed.caption.clone())]);
    let mut attempt = 0;
    loop {
        let reply = llm.complete(ATTRIBUTE_EXTRACTION, &subs)?;
        match parse_extraction(seed, &reply) {
            Err(PromptgenError::LlmProtocol { .. }) if attempt == 0 => attempt += 1,
            other => return other,
        }
    }
}

/// Declarative curation: type names dropped everywhere and attribute strings
/// dropped per concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeFilter {
    #[serde(default)]
    pub drop_types: Vec<String>,
    #[serde(default)]
    pub drop_attributes: BTreeMap<String, Vec<String>>,
}

impl Default for AttributeFilter {
    /// Types that are hard to tell apart in an image.
    fn default() -> Self {
        Self {
            drop_types: ["age", "size", "motion", "model name", "accessories"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            drop_attributes: BTreeMap::new(),
        }
    }
}

impl AttributeFilter {
    pub fn none() -> Self {
        Self {
            drop_types: Vec::new(),
            drop_attributes: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PromptgenError> {
        let config = |message: String| PromptgenError::Config {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| config(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| config(e.to_string()))
    }

    fn drops_type(&self, name: &str) -> bool {
        let n = normalize_type(name);
        self.drop_types.iter().any(|d| normalize_type(d) == n)
    }

    fn drops_attribute(&self, concept: &str, attribute: &str) -> bool {
        self.drop_attributes
            .get(concept)
            .is_some_and(|list| list.iter().any(|a| a.trim().eq_ignore_ascii_case(attribute)))
    }
}

/// Unions candidates per type across a concept's seeds (lower-cased), applies
/// the filter, and keeps types with at least two attributes. Type and
/// attribute order follow first appearance.
pub fn merge_concept_attributes(extractions: &[AttributeExtraction], filter: &AttributeFilter) -> Vec<AttributeType> {
    let mut order: Vec<String> = Vec::new();
    let mut merged: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for ex in extractions {
        let concept = &ex.seed.concept;
        for (ty, attrs) in &ex.candidates {
            let name = ty.trim().to_lowercase();
            if name.is_empty() || filter.drops_type(&name) {
                continue;
            }
            let entry = merged.entry(name.clone()).or_insert_with(|| {
                order.push(name.clone());
                Vec::new()
            });
            for a in attrs {
                let a = a.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
                if a.is_empty() || filter.drops_attribute(concept, &a) || entry.contains(&a) {
                    continue;
                }
                entry.push(a);
            }
        }
    }
    let mut seen_types = BTreeSet::new();
    order
        .into_iter()
        .filter(|n| seen_types.insert(n.clone()))
        .filter_map(|n| {
            let attrs = merged.remove(&n)?;
            (attrs.len() >= 2).then(|| AttributeType::new(n, attrs))
        })
        .collect()
}
