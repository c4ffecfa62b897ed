//! Concept / attribute-type / attribute hierarchy, coarse and dense prompts,
//! and the JSON dataset file that carries them.
//!
//! A [`BenchmarkDataset`] is only ever handed out after [`BenchmarkDataset::validate`]
//! succeeded, and validation stops at the first violated rule so the error
//! locator is deterministic.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io::{sha256_hex, write_atomic};
use crate::text::{contains_phrase, mentions_concept};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeType {
    pub name: String,
    pub attributes: Vec<String>,
}

impl AttributeType {
    pub fn new<S: Into<String>>(name: impl Into<String>, attributes: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            attributes: attributes.into_iter().map(Into::into).collect(),
        }
    }

    pub fn contains(&self, attribute: &str) -> bool {
        self.attributes.iter().any(|a| a == attribute)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Concept {
    pub name: String,
    pub attribute_types: Vec<AttributeType>,
}

impl Concept {
    pub fn new(name: impl Into<String>, attribute_types: Vec<AttributeType>) -> Self {
        Self {
            name: name.into(),
            attribute_types,
        }
    }

    pub fn attribute_type(&self, name: &str) -> Option<&AttributeType> {
        self.attribute_types.iter().find(|t| t.name == name)
    }

    /// Every attribute string of the concept, across all types.
    pub fn all_attributes(&self) -> impl Iterator<Item = &str> {
        self.attribute_types
            .iter()
            .flat_map(|t| t.attributes.iter().map(String::as_str))
    }

    /// First catalog attribute of this concept found (whole-word) in `text`.
    pub fn leaked_attribute(&self, text: &str) -> Option<&str> {
        self.all_attributes().find(|a| contains_phrase(text, a))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarsePrompt {
    pub id: String,
    pub concept: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_caption: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensePrompt {
    pub id: String,
    pub coarse_id: String,
    pub concept: String,
    pub attribute_type: String,
    pub attribute: String,
    pub text: String,
}

/// Catalog plus coarse and dense prompts. Field order here is the on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkDataset {
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub concepts: Vec<Concept>,
    pub coarse_prompts: Vec<CoarsePrompt>,
    pub dense_prompts: Vec<DensePrompt>,
}

/// Named dataset invariants, reported with every [`ValidationError`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    ConceptNameFormat,
    ConceptNameUnique,
    ConceptHasTypes,
    TypeNameNonEmpty,
    TypeNameUnique,
    TypeMinAttributes,
    AttributeNonEmpty,
    AttributeUnique,
    PromptIdUnique,
    PromptConceptResolves,
    CoarseContainsConcept,
    CoarseAttributeAbsent,
    CoarseLinkResolves,
    CoarseLinkConcept,
    AttributeTypeResolves,
    AttributeResolves,
    DenseContainsConcept,
    DenseContainsAttribute,
    DenseTypeCoverage,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::ConceptNameFormat => "concept_name_format",
            Rule::ConceptNameUnique => "concept_name_unique",
            Rule::ConceptHasTypes => "concept_has_types",
            Rule::TypeNameNonEmpty => "type_name_nonempty",
            Rule::TypeNameUnique => "type_name_unique",
            Rule::TypeMinAttributes => "type_min_attributes",
            Rule::AttributeNonEmpty => "attribute_nonempty",
            Rule::AttributeUnique => "attribute_unique",
            Rule::PromptIdUnique => "prompt_id_unique",
            Rule::PromptConceptResolves => "prompt_concept_resolves",
            Rule::CoarseContainsConcept => "coarse_contains_concept",
            Rule::CoarseAttributeAbsent => "coarse_attribute_absent",
            Rule::CoarseLinkResolves => "coarse_link_resolves",
            Rule::CoarseLinkConcept => "coarse_link_concept",
            Rule::AttributeTypeResolves => "attribute_type_resolves",
            Rule::AttributeResolves => "attribute_resolves",
            Rule::DenseContainsConcept => "dense_contains_concept",
            Rule::DenseContainsAttribute => "dense_contains_attribute",
            Rule::DenseTypeCoverage => "dense_type_coverage",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{locator}: {rule}: {message}")]
pub struct ValidationError {
    pub locator: String,
    pub rule: Rule,
    pub message: String,
}

impl ValidationError {
    fn new(locator: impl Into<String>, rule: Rule, message: impl Into<String>) -> Self {
        Self {
            locator: locator.into(),
            rule,
            message: message.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid dataset: {0}")]
    Validation(#[from] ValidationError),
}

/// Counts and means reported for a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub concepts: usize,
    pub attributes: usize,
    pub coarse_prompts: usize,
    pub dense_prompts: usize,
    pub mean_types_per_concept: f64,
    pub mean_attributes_per_concept: f64,
    pub mean_dense_per_coarse: f64,
}

impl BenchmarkDataset {
    pub fn concept(&self, name: &str) -> Option<&Concept> {
        self.concepts.iter().find(|c| c.name == name)
    }

    pub fn attribute_type(&self, concept: &str, attribute_type: &str) -> Option<&AttributeType> {
        self.concept(concept)?.attribute_type(attribute_type)
    }

    pub fn coarse_prompt(&self, id: &str) -> Option<&CoarsePrompt> {
        self.coarse_prompts.iter().find(|p| p.id == id)
    }

    pub fn dense_prompt(&self, id: &str) -> Option<&DensePrompt> {
        self.dense_prompts.iter().find(|p| p.id == id)
    }

    /// Dense prompts derived from the coarse prompt `coarse_id`.
    pub fn dense_for_coarse<'a>(&'a self, coarse_id: &'a str) -> impl Iterator<Item = &'a DensePrompt> + 'a {
        self.dense_prompts.iter().filter(move |d| d.coarse_id == coarse_id)
    }

    pub fn from_json_str(text: &str) -> Result<Self, CatalogError> {
        let dataset: Self = serde_json::from_str(text)?;
        dataset.validate()?;
        Ok(dataset)
    }

    /// Canonical serialization: pretty JSON, fixed field order, trailing newline.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("dataset is always serializable");
        s.push('\n');
        s
    }

    /// SHA-256 of the canonical serialization.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_json_string().as_bytes())
    }

    pub fn stats(&self) -> StatsSummary {
        let concepts = self.concepts.len();
        let types: usize = self.concepts.iter().map(|c| c.attribute_types.len()).sum();
        let attributes: usize = self
            .concepts
            .iter()
            .flat_map(|c| &c.attribute_types)
            .map(|t| t.attributes.len())
            .sum();
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        StatsSummary {
            concepts,
            attributes,
            coarse_prompts: self.coarse_prompts.len(),
            dense_prompts: self.dense_prompts.len(),
            mean_types_per_concept: ratio(types, concepts),
            mean_attributes_per_concept: ratio(attributes, concepts),
            mean_dense_per_coarse: ratio(self.dense_prompts.len(), self.coarse_prompts.len()),
        }
    }

    /// Checks every dataset invariant, returning the first violation.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut concept_index: HashMap<&str, &Concept> = HashMap::new();
        for (ci, concept) in self.concepts.iter().enumerate() {
            let at = format!("concepts[{ci}]");
            let name = &concept.name;
            if name.trim().is_empty() || name.trim() != name || name.to_lowercase() != *name {
                return Err(ValidationError::new(
                    format!("{at}.name"),
                    Rule::ConceptNameFormat,
                    format!("concept name {name:?} must be non-empty, trimmed and lowercase"),
                ));
            }
            if concept_index.insert(name, concept).is_some() {
                return Err(ValidationError::new(
                    format!("{at}.name"),
                    Rule::ConceptNameUnique,
                    format!("duplicate concept {name:?}"),
                ));
            }
            if concept.attribute_types.is_empty() {
                return Err(ValidationError::new(
                    format!("{at}.attribute_types"),
                    Rule::ConceptHasTypes,
                    format!("concept {name:?} has no attribute types"),
                ));
            }
            let mut type_names = HashSet::new();
            for (ti, ty) in concept.attribute_types.iter().enumerate() {
                let at = format!("{at}.attribute_types[{ti}]");
                if ty.name.trim().is_empty() {
                    return Err(ValidationError::new(
                        format!("{at}.name"),
                        Rule::TypeNameNonEmpty,
                        "empty attribute type name",
                    ));
                }
                if !type_names.insert(ty.name.as_str()) {
                    return Err(ValidationError::new(
                        format!("{at}.name"),
                        Rule::TypeNameUnique,
                        format!("duplicate attribute type {:?} for concept {name:?}", ty.name),
                    ));
                }
                if ty.attributes.len() < 2 {
                    return Err(ValidationError::new(
                        format!("{at}.attributes"),
                        Rule::TypeMinAttributes,
                        format!(
                            "attribute type {:?} needs at least 2 attributes, has {}",
                            ty.name,
                            ty.attributes.len()
                        ),
                    ));
                }
                let mut seen = HashSet::new();
                for (ai, attr) in ty.attributes.iter().enumerate() {
                    if attr.trim().is_empty() {
                        return Err(ValidationError::new(
                            format!("{at}.attributes[{ai}]"),
                            Rule::AttributeNonEmpty,
                            "empty attribute",
                        ));
                    }
                    if !seen.insert(attr.as_str()) {
                        return Err(ValidationError::new(
                            format!("{at}.attributes[{ai}]"),
                            Rule::AttributeUnique,
                            format!("duplicate attribute {attr:?} in type {:?}", ty.name),
                        ));
                    }
                }
            }
        }

        let mut ids: HashSet<&str> = HashSet::new();
        let mut coarse_index: HashMap<&str, &CoarsePrompt> = HashMap::new();
        for (pi, prompt) in self.coarse_prompts.iter().enumerate() {
            let at = format!("coarse_prompts[{pi}]");
            if !ids.insert(prompt.id.as_str()) {
                return Err(ValidationError::new(
                    format!("{at}.id"),
                    Rule::PromptIdUnique,
                    format!("duplicate prompt id {:?}", prompt.id),
                ));
            }
            let Some(concept) = concept_index.get(prompt.concept.as_str()) else {
                return Err(ValidationError::new(
                    format!("{at}.concept"),
                    Rule::PromptConceptResolves,
                    format!(
                        "coarse prompt {:?} names unknown concept {:?}",
                        prompt.id, prompt.concept
                    ),
                ));
            };
            if !mentions_concept(&prompt.text, &concept.name) {
                return Err(ValidationError::new(
                    format!("{at}.text"),
                    Rule::CoarseContainsConcept,
                    format!("coarse prompt {:?} does not mention {:?}", prompt.id, concept.name),
                ));
            }
            if let Some(leak) = concept.leaked_attribute(&prompt.text) {
                return Err(ValidationError::new(
                    format!("{at}.text"),
                    Rule::CoarseAttributeAbsent,
                    format!("coarse prompt {:?} contains attribute {leak:?}", prompt.id),
                ));
            }
            coarse_index.insert(prompt.id.as_str(), prompt);
        }

        // (concept, type) -> attributes represented, plus the first dense prompt index.
        let mut coverage: BTreeMap<(&str, &str), (BTreeSet<&str>, usize)> = BTreeMap::new();
        for (pi, prompt) in self.dense_prompts.iter().enumerate() {
            let at = format!("dense_prompts[{pi}]");
            let id = &prompt.id;
            if !ids.insert(id.as_str()) {
                return Err(ValidationError::new(
                    format!("{at}.id"),
                    Rule::PromptIdUnique,
                    format!("duplicate prompt id {id:?}"),
                ));
            }
            let Some(concept) = concept_index.get(prompt.concept.as_str()) else {
                return Err(ValidationError::new(
                    format!("{at}.concept"),
                    Rule::PromptConceptResolves,
                    format!("dense prompt {id:?} names unknown concept {:?}", prompt.concept),
                ));
            };
            let Some(coarse) = coarse_index.get(prompt.coarse_id.as_str()) else {
                return Err(ValidationError::new(
                    format!("{at}.coarse_id"),
                    Rule::CoarseLinkResolves,
                    format!(
                        "dense prompt {id:?} links to unknown coarse prompt {:?}",
                        prompt.coarse_id
                    ),
                ));
            };
            if coarse.concept != prompt.concept {
                return Err(ValidationError::new(
                    format!("{at}.coarse_id"),
                    Rule::CoarseLinkConcept,
                    format!(
                        "dense prompt {id:?} is for {:?} but its coarse prompt is for {:?}",
                        prompt.concept, coarse.concept
                    ),
                ));
            }
            let Some(ty) = concept.attribute_type(&prompt.attribute_type) else {
                return Err(ValidationError::new(
                    format!("{at}.attribute_type"),
                    Rule::AttributeTypeResolves,
                    format!(
                        "dense prompt {id:?} names unknown attribute type {:?}",
                        prompt.attribute_type
                    ),
                ));
            };
            if !ty.contains(&prompt.attribute) {
                return Err(ValidationError::new(
                    format!("{at}.attribute"),
                    Rule::AttributeResolves,
                    format!(
                        "dense prompt {id:?} names attribute {:?} absent from {}/{}",
                        prompt.attribute, concept.name, ty.name
                    ),
                ));
            }
            if !mentions_concept(&prompt.text, &concept.name) {
                return Err(ValidationError::new(
                    format!("{at}.text"),
                    Rule::DenseContainsConcept,
                    format!("dense prompt {id:?} does not mention {:?}", concept.name),
                ));
            }
            if !contains_phrase(&prompt.text, &prompt.attribute) {
                return Err(ValidationError::new(
                    format!("{at}.text"),
                    Rule::DenseContainsAttribute,
                    format!("dense prompt {id:?} does not contain attribute {:?}", prompt.attribute),
                ));
            }
            coverage
                .entry((prompt.concept.as_str(), prompt.attribute_type.as_str()))
                .or_insert_with(|| (BTreeSet::new(), pi))
                .0
                .insert(prompt.attribute.as_str());
        }

        let mut thin: Vec<_> = coverage.iter().filter(|(_, (attrs, _))| attrs.len() < 2).collect();
        thin.sort_by_key(|(_, (_, first))| *first);
        if let Some(((concept, ty), (attrs, first))) = thin.first() {
            return Err(ValidationError::new(
                format!("dense_prompts[{first}].attribute_type"),
                Rule::DenseTypeCoverage,
                format!(
                    "{concept}/{ty} has dense prompts for only {} attribute(s); at least 2 are required",
                    attrs.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Reads and validates a dataset file.
pub fn load_dataset(path: &Path) -> Result<BenchmarkDataset, CatalogError> {
    let text = fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    BenchmarkDataset::from_json_str(&text)
}

/// Validates and atomically writes a dataset file.
pub fn save_dataset(dataset: &BenchmarkDataset, path: &Path) -> Result<(), CatalogError> {
    dataset.validate()?;
    write_atomic(path, dataset.to_json_string().as_bytes()).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })
}
