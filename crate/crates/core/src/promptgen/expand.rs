use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{normalize_type, parse_json_reply, PromptgenError, SeedPrompt};
use crate::adapters::llm::PROMPT_EXPANSION;
use crate::adapters::LlmClient;
use crate::catalog::AttributeType;
use crate::text::{contains_phrase, mentions_concept};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum InjectionOutcome {
    Dense {
        text: String,
    },
    /// The LLM left this attribute out as implausible for the scene.
    Skipped,
    /// The LLM's text failed the dense-prompt checks.
    Rejected {
        text: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub attribute_type: String,
    pub attribute: String,
    #[serde(flatten)]
    pub outcome: InjectionOutcome,
}

/// The attribute-free rewrite of a seed caption and one injection per
/// catalog attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptExpansion {
    pub seed: SeedPrompt,
    pub coarse_text: String,
    pub injections: Vec<Injection>,
    /// Reply entries naming an attribute that is not in the catalog.
    pub unknown_attributes: usize,
}

impl PromptExpansion {
    pub fn dense(&self) -> impl Iterator<Item = (&Injection, &str)> {
        self.injections.iter().filter_map(|i| match &i.outcome {
            InjectionOutcome::Dense { text } => Some((i, text.as_str())),
            _ => None,
        })
    }

    pub fn count(&self, pred: impl Fn(&InjectionOutcome) -> bool) -> usize {
        self.injections.iter().filter(|i| pred(&i.outcome)).count()
    }
}

#[derive(Debug, Deserialize)]
struct ExpansionReply {
    seed_prompt: String,
    #[serde(default)]
    modified_prompts: Vec<ModifiedPrompt>,
}

#[derive(Debug, Deserialize)]
struct ModifiedPrompt {
    attribute_type: String,
    attribute_value: serde_json::Value,
    generated_prompt: String,
}

/// The JSON handed to the expansion template.
pub(crate) fn attributes_json(seed: &SeedPrompt, types: &[AttributeType]) -> String {
    let possible: serde_json::Map<String, serde_json::Value> =
        types.iter().map(|t| (t.name.clone(), json!(t.attributes))).collect();
    let v = json!({
        "caption": seed.caption,
        "main_subject": seed.concept,
        "visual_modifiers": { "possible_attributes": possible },
    });
    serde_json::to_string_pretty(&v).expect("plain JSON")
}

fn scalar(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.trim().to_lowercase()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_expansion(seed: &SeedPrompt, types: &[AttributeType], reply: &str) -> Result<PromptExpansion, PromptgenError> {
    let parsed: ExpansionReply = parse_json_reply(reply)?;
    let coarse_text = parsed.seed_prompt.trim().to_string();
    if !mentions_concept(&coarse_text, &seed.concept) {
        return Err(PromptgenError::CoarseMissingConcept {
            text: coarse_text,
            concept: seed.concept.clone(),
        });
    }
    for t in types {
        if let Some(a) = t.attributes.iter().find(|a| contains_phrase(&coarse_text, a)) {
            return Err(PromptgenError::CoarseLeakage {
                text: coarse_text,
                attribute: a.clone(),
            });
        }
    }

    let known: HashMap<(String, &str), &AttributeType> = types
        .iter()
        .flat_map(|t| {
            t.attributes
                .iter()
                .map(move |a| ((normalize_type(&t.name), a.as_str()), t))
        })
        .collect();
    let mut replies: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut unknown = 0;
    for m in parsed.modified_prompts {
        let Some(value) = scalar(&m.attribute_value) else {
            unknown += 1;
            continue;
        };
        let key = (normalize_type(&m.attribute_type), value);
        if !known.contains_key(&(key.0.clone(), key.1.as_str())) {
            unknown += 1;
            continue;
        }
        replies
            .entry(key)
            .or_insert_with(|| m.generated_prompt.trim().to_string());
    }

    let mut injections = Vec::new();
    for t in types {
        let nt = normalize_type(&t.name);
        for a in &t.attributes {
            let outcome = match replies.get(&(nt.clone(), a.clone())) {
                None => InjectionOutcome::Skipped,
                Some(text) if !mentions_concept(text, &seed.concept) => InjectionOutcome::Rejected {
                    text: text.clone(),
                    reason: format!("does not mention {:?}", seed.concept),
                },
                Some(text) if !contains_phrase(text, a) => InjectionOutcome::Rejected {
                    text: text.clone(),
                    reason: format!("does not contain {a:?}"),
                },
                Some(text) => InjectionOutcome::Dense { text: text.clone() },
            };
            injections.push(Injection {
                attribute_type: t.name.clone(),
                attribute: a.clone(),
                outcome,
            });
        }
    }
    Ok(PromptExpansion {
        seed: seed.clone(),
        coarse_text,
        injections,
        unknown_attributes: unknown,
    })
}

/// Asks the LLM for an attribute-free coarse prompt and one dense prompt per
/// attribute. Attributes the reply leaves out are recorded as skipped. An
/// unparseable reply is retried once.
pub fn expand_prompts(
    seed: &SeedPrompt,
    types: &[AttributeType],
    llm: &LlmClient,
) -> Result<PromptExpansion, PromptgenError> {
    if types.is_empty() {
        return Err(PromptgenError::NoAttributeTypes);
    }
    let subs = BTreeMap::from([("attributes_json".to_string(), attributes_json(seed, types))]);
    let mut attempt = 0;
    loop {
        let reply = llm.complete(PROMPT_EXPANSION, &subs)?;
        match parse_expansion(seed, types, &reply) {
            Err(PromptgenError::LlmProtocol { .. }) if attempt == 0 => attempt += 1,
            other => return other,
        }
    }
}
