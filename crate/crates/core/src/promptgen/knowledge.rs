//! An offline LLM stand-in that answers both meta-prompts from a small
//! knowledge file, so dataset builds can run without a model.
//!
//! Knowledge file (JSON):
//!
//! ```json
//! {
//!   "concepts": {
//!     "table": {
//!       "attributes": {"material": ["wood", "metal", "glass"]},
//!       "forms": {"wooden": "wood"}
//!     }
//!   },
//!   "implausible": [{"concept": "bird", "attribute": "perched", "when": "flying"}],
//!   "skip_rate": 0.0
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::PromptgenError;
use crate::adapters::llm::{ATTRIBUTE_EXTRACTION, PROMPT_EXPANSION};
use crate::adapters::{AdapterError, LlmBackend, LlmRequest};
use crate::io::stable_u64;
use crate::scoring::PREPOSITIONS;
use crate::text::{contains_phrase, indefinite_article, mentions_concept, tokenize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptKnowledge {
    /// Type -> attributes, in order.
    pub attributes: BTreeMap<String, Vec<String>>,
    /// Surface word -> attribute it expresses ("wooden" -> "wood").
    #[serde(default)]
    pub forms: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImplausibleRule {
    pub concept: String,
    pub attribute: String,
    /// Phrase in the caption that makes the attribute implausible.
    pub when: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeBase {
    pub concepts: BTreeMap<String, ConceptKnowledge>,
    #[serde(default)]
    pub implausible: Vec<ImplausibleRule>,
    /// Fraction of remaining injections skipped, chosen by a stable hash.
    #[serde(default)]
    pub skip_rate: f64,
}

impl KnowledgeBase {
    pub fn load(path: &Path) -> Result<Self, PromptgenError> {
        let config = |message: String| PromptgenError::Config {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| config(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| config(e.to_string()))
    }
}

/// Word-level view of a prompt that keeps the original spelling.
struct Words(Vec<String>);

impl Words {
    fn new(text: &str) -> Self {
        Words(text.split_whitespace().map(str::to_string).collect())
    }

    fn key(word: &str) -> String {
        tokenize(word).join(" ")
    }

    /// Index range of the first whole-word occurrence of `phrase`.
    fn find(&self, phrase: &str, plural_tail: bool) -> Option<(usize, usize)> {
        let needle = tokenize(phrase);
        if needle.is_empty() || needle.len() > self.0.len() {
            return None;
        }
        (0..=self.0.len() - needle.len())
            .find(|&i| {
                needle.iter().enumerate().all(|(j, n)| {
                    let w = Self::key(&self.0[i + j]);
                    if plural_tail && j + 1 == needle.len() {
                        mentions_concept(&w, n)
                    } else {
                        &w == n
                    }
                })
            })
            .map(|i| (i, i + needle.len()))
    }

    fn fix_articles(&mut self) {
        for i in 0..self.0.len().saturating_sub(1) {
            let lower = self.0[i].to_lowercase();
            if lower == "a" || lower == "an" {
                let art = indefinite_article(&self.0[i + 1]);
                let capital = self.0[i].starts_with(char::is_uppercase);
                self.0[i] = if capital {
                    let mut c = art.chars();
                    let first = c.next().expect("non-empty").to_uppercase().collect::<String>();
                    first + c.as_str()
                } else {
                    art.to_string()
                };
            }
        }
    }

    fn join(&self) -> String {
        self.0.join(" ")
    }
}

/// Knowledge-driven [`LlmBackend`].
#[derive(Debug, Clone)]
pub struct KnowledgeLlm {
    kb: KnowledgeBase,
}

impl KnowledgeLlm {
    pub fn new(kb: KnowledgeBase) -> Self {
        Self { kb }
    }

    pub fn knowledge(&self) -> &KnowledgeBase {
        &self.kb
    }

    fn subject(&self, caption: &str) -> Option<(&String, &ConceptKnowledge)> {
        let words = Words::new(caption);
        self.kb
            .concepts
            .iter()
            .filter_map(|(name, k)| words.find(name, true).map(|(i, _)| (i, name, k)))
            .min_by_key(|(i, name, _)| (*i, std::cmp::Reverse(name.len())))
            .map(|(_, n, k)| (n, k))
    }

    /// Surface phrases (attributes and their forms) present in `caption`.
    fn surface_phrases(k: &ConceptKnowledge) -> impl Iterator<Item = (&str, &str)> {
        k.attributes
            .values()
            .flatten()
            .map(|a| (a.as_str(), a.as_str()))
            .chain(k.forms.iter().map(|(f, a)| (f.as_str(), a.as_str())))
    }

    /// Whether the mock leaves `attribute` out for this caption.
    pub fn skips(&self, concept: &str, caption: &str, attribute_type: &str, attribute: &str) -> bool {
        let rule = self
            .kb
            .implausible
            .iter()
            .any(|r| r.concept == concept && r.attribute == attribute && contains_phrase(caption, &r.when));
        if rule {
            return true;
        }
        if self.kb.skip_rate <= 0.0 {
            return false;
        }
        let u = (stable_u64(&["skip", caption, attribute_type, attribute]) >> 11) as f64 / (1u64 << 53) as f64;
        u < self.kb.skip_rate
    }

    /// The caption with every known attribute phrase of the concept removed.
    pub fn strip_attributes(&self, concept: &str, caption: &str) -> String {
        let Some(k) = self.kb.concepts.get(concept) else {
            return caption.to_string();
        };
        let mut words = Words::new(caption);
        let mut phrases: Vec<&str> = Self::surface_phrases(k).map(|(p, _)| p).collect();
        phrases.sort_by_key(|p| std::cmp::Reverse(tokenize(p).len()));
        let mut removed = vec![false; words.0.len()];
        for p in phrases {
            let mut from = 0;
            while from < words.0.len() {
                let rest = Words(words.0[from..].to_vec());
                let Some((s, e)) = rest.find(p, false) else { break };
                for r in &mut removed[from + s..from + e] {
                    *r = true;
                }
                from += e;
            }
        }
        // A conjunction between removed adjectives goes too.
        for i in 0..words.0.len() {
            if Words::key(&words.0[i]) == "and" {
                let prev = i > 0 && removed[i - 1];
                let next = i + 1 < words.0.len() && removed[i + 1];
                if prev || next {
                    removed[i] = true;
                }
            }
        }
        words.0 = words
            .0
            .into_iter()
            .zip(removed)
            .filter(|(_, r)| !r)
            .map(|(w, _)| w)
            .collect();
        words.fix_articles();
        words.join()
    }

    /// Puts `attribute` next to the concept in `coarse`.
    pub fn inject(concept: &str, coarse: &str, attribute: &str) -> Option<String> {
        let mut words = Words::new(coarse);
        let (s, e) = words.find(concept, true)?;
        let first = tokenize(attribute).into_iter().next().unwrap_or_default();
        let at = if PREPOSITIONS.contains(&first.as_str()) { e } else { s };
        let insert: Vec<String> = attribute.split_whitespace().map(str::to_string).collect();
        words.0.splice(at..at, insert);
        words.fix_articles();
        Some(words.join())
    }

    fn extraction_reply(&self, caption: &str) -> String {
        let Some((name, k)) = self.subject(caption) else {
            return json!({"caption": caption, "main_subject": "unknown", "visual_modifiers": {"existing": {}, "possible_attributes": {}}}).to_string();
        };
        let mut existing = serde_json::Map::new();
        for (ty, attrs) in &k.attributes {
            let hit = Self::surface_phrases(k)
                .filter(|(_, a)| attrs.iter().any(|x| x == a))
                .find(|(p, _)| contains_phrase(caption, p))
                .map(|(_, a)| a);
            if let Some(a) = hit {
                existing.insert(ty.clone(), json!(a));
            }
        }
        serde_json::to_string_pretty(&json!({
            "caption": caption,
            "main_subject": name,
            "visual_modifiers": {"existing": existing, "possible_attributes": k.attributes},
        }))
        .expect("plain JSON")
    }

    fn expansion_reply(&self, input: &str) -> Result<String, AdapterError> {
        let v: serde_json::Value =
            serde_json::from_str(input).map_err(|e| AdapterError::Protocol(format!("attributes_json: {e}")))?;
        let caption = v["caption"].as_str().unwrap_or_default();
        let concept = v["main_subject"].as_str().unwrap_or_default();
        let coarse = self.strip_attributes(concept, caption);
        let mut modified = Vec::new();
        if let Some(types) = v["visual_modifiers"]["possible_attributes"].as_object() {
            for (ty, attrs) in types {
                for a in attrs.as_array().into_iter().flatten().filter_map(|a| a.as_str()) {
                    if self.skips(concept, caption, ty, a) {
                        continue;
                    }
                    if let Some(text) = Self::inject(concept, &coarse, a) {
                        modified.push(json!({"attribute_type": ty, "attribute_value": a, "generated_prompt": text}));
                    }
                }
            }
        }
        Ok(serde_json::to_string_pretty(&json!({
            "original_caption": caption,
            "seed_prompt": coarse,
            "main_subject": concept,
            "modified_prompts": modified,
        }))
        .expect("plain JSON"))
    }
}

impl LlmBackend for KnowledgeLlm {
    fn name(&self) -> &str {
        "knowledge"
    }

    fn concurrent_safe(&self) -> bool {
        true
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, AdapterError> {
        let slot = |name: &str| {
            request
                .substitutions
                .get(name)
                .ok_or_else(|| AdapterError::Protocol(format!("knowledge mock needs the {name} substitution")))
        };
        match request.template.as_str() {
            ATTRIBUTE_EXTRACTION => Ok(self.extraction_reply(slot("seed_prompt")?)),
            PROMPT_EXPANSION => self.expansion_reply(slot("attributes_json")?),
            other => Err(AdapterError::Protocol(format!(
                "knowledge mock has no answer for template {other:?}"
            ))),
        }
    }
}
