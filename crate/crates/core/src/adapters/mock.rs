//! Deterministic mock generator and scorer.
//!
//! The mock generator attaches ground-truth labels to every image; the mock
//! scorer reads them back, returning `s_hi` when the queried phrase is shown
//! and `s_lo` otherwise. With zero noise every attribute-concept score of a
//! mock run can be computed by hand.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    AdapterError, AlignmentScorer, GeneratedImage, GenerationBatch, GenerationFailureRecord, GenerationRequest,
    ImageGenerator, ImageRef, CONCEPT_LABEL,
};
use crate::catalog::BenchmarkDataset;
use crate::io::stable_u64;
use crate::text::{mentions_concept, tokenize};

/// Probability as a function of guidance scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "curve", rename_all = "snake_case")]
pub enum Curve {
    Constant {
        p: f64,
    },
    /// `g / (g + half)`: 0.5 at `g == half`, rising towards 1.
    Saturating {
        half: f64,
    },
}

impl Curve {
    pub fn at(&self, guidance: f64) -> f64 {
        let p = match *self {
            Curve::Constant { p } => p,
            Curve::Saturating { half } => guidance / (guidance + half),
        };
        p.clamp(0.0, 1.0)
    }

    /// Deterministic quota: how many of `n` images follow the curve.
    fn quota(&self, guidance: f64, n: usize) -> usize {
        (self.at(guidance) * n as f64).round() as usize
    }
}

/// How the mock picks an attribute for a type the prompt does not mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DefaultMode {
    /// Image `j` of a request gets attribute `j mod k`.
    RoundRobin,
    /// Every image gets one attribute (the first when unnamed).
    Fixed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attribute: Option<String>,
    },
    /// Seeded draw with the given weights, aligned with the type's attributes.
    Categorical { weights: Vec<f64> },
    /// The first `round(strength(g) * n)` images get `attribute` (the first
    /// when unnamed); the rest are round-robin.
    Skewed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attribute: Option<String>,
        strength: Curve,
    },
}

impl DefaultMode {
    fn favored<'a>(attribute: &Option<String>, attributes: &'a [String]) -> Result<&'a str, AdapterError> {
        match attribute {
            None => Ok(attributes[0].as_str()),
            Some(a) => match attributes.iter().find(|x| *x == a) {
                Some(x) => Ok(x.as_str()),
                None => Err(AdapterError::Protocol(format!(
                    "mock default attribute {a:?} is not in {attributes:?}"
                ))),
            },
        }
    }

    fn pick<'a>(
        &self,
        attributes: &'a [String],
        index: usize,
        n: usize,
        guidance: f64,
        rng_key: &[&str],
    ) -> Result<&'a str, AdapterError> {
        let k = attributes.len();
        match self {
            DefaultMode::RoundRobin => Ok(&attributes[index % k]),
            DefaultMode::Fixed { attribute } => Self::favored(attribute, attributes),
            DefaultMode::Categorical { weights } => {
                if weights.len() != k {
                    return Err(AdapterError::Protocol(format!(
                        "{} weights for {k} attributes",
                        weights.len()
                    )));
                }
                let dist = WeightedIndex::new(weights).map_err(|e| AdapterError::Protocol(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(stable_u64(rng_key));
                Ok(&attributes[dist.sample(&mut rng)])
            }
            DefaultMode::Skewed { attribute, strength } => {
                if index < strength.quota(guidance, n) {
                    Self::favored(attribute, attributes)
                } else {
                    Ok(&attributes[index % k])
                }
            }
        }
    }
}

/// What a prompt asks the mock for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptTarget {
    Coarse {
        concept: String,
    },
    Dense {
        concept: String,
        attribute_type: String,
        attribute: String,
    },
}

impl PromptTarget {
    fn concept(&self) -> &str {
        match self {
            PromptTarget::Coarse { concept } | PromptTarget::Dense { concept, .. } => concept,
        }
    }
}

#[derive(Debug, Clone)]
struct TypeProfile {
    name: String,
    attributes: Vec<String>,
    default: DefaultMode,
}

/// Offline image generator with configurable default-mode behavior and
/// prompt compliance.
#[derive(Debug)]
pub struct MockGenerator {
    concepts: BTreeMap<String, Vec<TypeProfile>>,
    by_id: HashMap<String, PromptTarget>,
    by_text: HashMap<String, PromptTarget>,
    compliance: Curve,
    failing_seeds: HashSet<u64>,
    calls: AtomicUsize,
}

impl MockGenerator {
    pub fn new() -> Self {
        Self {
            concepts: BTreeMap::new(),
            by_id: HashMap::new(),
            by_text: HashMap::new(),
            compliance: Curve::Constant { p: 1.0 },
            failing_seeds: HashSet::new(),
            calls: AtomicUsize::new(0),
        }
    }

    /// One concept with one attribute type; every prompt is treated as a
    /// coarse prompt for that concept.
    pub fn single<S: Into<String>>(
        concept: &str,
        attribute_type: &str,
        attributes: impl IntoIterator<Item = S>,
        mode: DefaultMode,
    ) -> Self {
        Self::new().with_type(concept, attribute_type, attributes, mode)
    }

    /// Registers every concept, type and prompt of `dataset`, using
    /// `mode_for(concept, type)` as the default mode.
    pub fn from_dataset(dataset: &BenchmarkDataset, mode_for: impl Fn(&str, &str) -> DefaultMode) -> Self {
        let mut g = Self::new();
        for c in &dataset.concepts {
            for t in &c.attribute_types {
                g = g.with_type(
                    &c.name,
                    &t.name,
                    t.attributes.iter().cloned(),
                    mode_for(&c.name, &t.name),
                );
            }
        }
        for p in &dataset.coarse_prompts {
            g = g.with_prompt(
                &p.id,
                &p.text,
                PromptTarget::Coarse {
                    concept: p.concept.clone(),
                },
            );
        }
        for p in &dataset.dense_prompts {
            g = g.with_prompt(
                &p.id,
                &p.text,
                PromptTarget::Dense {
                    concept: p.concept.clone(),
                    attribute_type: p.attribute_type.clone(),
                    attribute: p.attribute.clone(),
                },
            );
        }
        g
    }

    pub fn with_type<S: Into<String>>(
        mut self,
        concept: &str,
        attribute_type: &str,
        attributes: impl IntoIterator<Item = S>,
        mode: DefaultMode,
    ) -> Self {
        let attributes: Vec<String> = attributes.into_iter().map(Into::into).collect();
        assert!(!attributes.is_empty(), "mock attribute type needs attributes");
        self.concepts.entry(concept.to_string()).or_default().push(TypeProfile {
            name: attribute_type.to_string(),
            attributes,
            default: mode,
        });
        self
    }

    pub fn with_prompt(mut self, prompt_id: &str, text: &str, target: PromptTarget) -> Self {
        self.by_id.insert(prompt_id.to_string(), target.clone());
        self.by_text.entry(text.to_string()).or_insert(target);
        self
    }

    /// Probability (as a function of guidance) that a dense prompt's
    /// attribute is honored. Defaults to always.
    pub fn with_compliance(mut self, curve: Curve) -> Self {
        self.compliance = curve;
        self
    }

    /// Seeds for which generation fails.
    pub fn failing_seeds(mut self, seeds: impl IntoIterator<Item = u64>) -> Self {
        self.failing_seeds.extend(seeds);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn resolve(&self, request: &GenerationRequest) -> Result<PromptTarget, AdapterError> {
        if let Some(t) = self
            .by_id
            .get(&request.prompt_id)
            .or_else(|| self.by_text.get(&request.prompt))
        {
            return Ok(t.clone());
        }
        if self.concepts.len() == 1 {
            let concept = self.concepts.keys().next().expect("one concept").clone();
            return Ok(PromptTarget::Coarse { concept });
        }
        Err(AdapterError::Protocol(format!(
            "mock generator has no target for prompt {:?}",
            request.prompt_id
        )))
    }

    /// Ground-truth labels for image `index` of `request`.
    pub fn labels_for(
        &self,
        request: &GenerationRequest,
        target: &PromptTarget,
        index: usize,
    ) -> Result<BTreeMap<String, String>, AdapterError> {
        let concept = target.concept();
        let types = self
            .concepts
            .get(concept)
            .ok_or_else(|| AdapterError::Protocol(format!("mock generator does not know concept {concept:?}")))?;
        let seed = (request.base_seed + index as u64).to_string();
        let mut labels = BTreeMap::new();
        labels.insert(CONCEPT_LABEL.to_string(), concept.to_string());
        for ty in types {
            let requested = match target {
                PromptTarget::Dense {
                    attribute_type,
                    attribute,
                    ..
                } if *attribute_type == ty.name => Some(attribute),
                _ => None,
            };
            let chosen = match requested {
                Some(a) if index < self.compliance.quota(request.guidance_scale, request.n) => a.as_str(),
                _ => ty.default.pick(
                    &ty.attributes,
                    index,
                    request.n,
                    request.guidance_scale,
                    &[&request.prompt, &seed, &ty.name],
                )?,
            };
            labels.insert(ty.name.clone(), chosen.to_string());
        }
        Ok(labels)
    }
}

impl Default for MockGenerator {
    fn default() -> Self {
        Self::new()
    }
}

impl ImageGenerator for MockGenerator {
    fn name(&self) -> &str {
        "mock-generator"
    }

    fn max_concurrency(&self) -> usize {
        usize::MAX
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationBatch, AdapterError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let target = self.resolve(request)?;
        let mut batch = GenerationBatch::default();
        for index in 0..request.n {
            let seed = request.base_seed + index as u64;
            if self.failing_seeds.contains(&seed) {
                batch.failures.push(GenerationFailureRecord {
                    seed,
                    message: "mock failure".into(),
                });
                continue;
            }
            batch.images.push(GeneratedImage {
                id: format!("s{seed}"),
                uri: format!("mock://{}/{seed}", request.prompt_id),
                seed,
                labels: Some(self.labels_for(request, &target, index)?),
            });
        }
        Ok(batch)
    }
}

const QUERY_STOPWORDS: &[&str] = &["a", "an", "the", "photo", "of"];

/// Whether a labelled image "shows" the query phrase.
///
/// When the image carries a concept label the query must mention that
/// concept; a query that names nothing but the concept is then shown. Otherwise
/// the image shows the query iff every token of some attribute label appears
/// among the query tokens.
pub fn mock_shows(labels: &BTreeMap<String, String>, text: &str) -> bool {
    let query: HashSet<String> = tokenize(text)
        .into_iter()
        .filter(|t| !QUERY_STOPWORDS.contains(&t.as_str()))
        .collect();
    if let Some(concept) = labels.get(CONCEPT_LABEL) {
        if !mentions_concept(text, concept) {
            return false;
        }
        let concept_tokens: HashSet<String> = tokenize(concept).into_iter().collect();
        let rest = query
            .iter()
            .filter(|t| {
                !concept_tokens
                    .iter()
                    .any(|c| *t == c || t.strip_prefix(c.as_str()).is_some_and(|s| s == "s" || s == "es"))
            })
            .count();
        if rest == 0 {
            return true;
        }
    }
    labels
        .iter()
        .filter(|(k, _)| k.as_str() != CONCEPT_LABEL)
        .any(|(_, v)| {
            let toks = tokenize(v);
            !toks.is_empty() && toks.iter().all(|t| query.contains(t))
        })
}

/// Label-reading scorer: `s_hi` when [`mock_shows`], else `s_lo`, plus
/// optional deterministic noise keyed on `(image id, text)`.
#[derive(Debug)]
pub struct MockScorer {
    s_hi: f64,
    s_lo: f64,
    noise: f64,
    failing: HashSet<String>,
    raw_override: Option<f64>,
    calls: AtomicUsize,
}

impl MockScorer {
    pub fn new(s_hi: f64, s_lo: f64) -> Self {
        Self {
            s_hi,
            s_lo,
            noise: 0.0,
            failing: HashSet::new(),
            raw_override: None,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_noise(mut self, amplitude: f64) -> Self {
        self.noise = amplitude;
        self
    }

    /// Image ids whose scoring fails with a per-image error.
    pub fn failing_on<S: Into<String>>(mut self, ids: impl IntoIterator<Item = S>) -> Self {
        self.failing.extend(ids.into_iter().map(Into::into));
        self
    }

    /// Always returns `value` unchecked; simulates a misconfigured backend.
    pub fn returning(mut self, value: f64) -> Self {
        self.raw_override = Some(value);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl AlignmentScorer for MockScorer {
    fn name(&self) -> &str {
        "mock-scorer"
    }

    fn max_concurrency(&self) -> usize {
        usize::MAX
    }

    fn score(&self, image: &ImageRef, text: &str) -> Result<f64, AdapterError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.failing.contains(&image.id) {
            return Err(AdapterError::ImageFailure {
                image_id: image.id.clone(),
                message: "mock scoring failure".into(),
            });
        }
        if let Some(v) = self.raw_override {
            return Ok(v);
        }
        let labels = image.labels.as_ref().ok_or_else(|| {
            AdapterError::Protocol(format!("mock scorer needs labelled images; {} has none", image.id))
        })?;
        let base = if mock_shows(labels, text) { self.s_hi } else { self.s_lo };
        if self.noise == 0.0 {
            return Ok(base);
        }
        let u = (stable_u64(&[&image.id, text]) >> 11) as f64 / (1u64 << 53) as f64;
        Ok((base + self.noise * (2.0 * u - 1.0)).clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::score_alignment;
    use crate::adapters::AlignmentQuery;

    fn request(n: usize, guidance: f64) -> GenerationRequest {
        GenerationRequest {
            prompt_id: "p".into(),
            prompt: "a bird".into(),
            n,
            guidance_scale: guidance,
            base_seed: 0,
            params: BTreeMap::new(),
        }
    }

    fn state_labels(batch: &GenerationBatch) -> Vec<String> {
        batch
            .images
            .iter()
            .map(|i| i.labels.as_ref().unwrap()["state"].clone())
            .collect()
    }

    #[test]
    fn round_robin_alternates() {
        let g = MockGenerator::single("bird", "state", ["A", "B"], DefaultMode::RoundRobin);
        assert_eq!(
            state_labels(&g.generate(&request(4, 7.5)).unwrap()),
            ["A", "B", "A", "B"]
        );
    }

    #[test]
    fn degenerate_categorical_always_picks_a() {
        let g = MockGenerator::single(
            "bird",
            "state",
            ["A", "B"],
            DefaultMode::Categorical {
                weights: vec![1.0, 0.0],
            },
        );
        assert_eq!(state_labels(&g.generate(&request(3, 7.5)).unwrap()), ["A", "A", "A"]);
    }

    #[test]
    fn round_robin_over_k_gives_m_per_attribute() {
        let g = MockGenerator::single("bird", "state", ["a", "b", "c"], DefaultMode::RoundRobin);
        let labels = state_labels(&g.generate(&request(12, 7.5)).unwrap());
        for a in ["a", "b", "c"] {
            assert_eq!(labels.iter().filter(|l| *l == a).count(), 4);
        }
    }

    #[test]
    fn categorical_is_deterministic() {
        let g = MockGenerator::single(
            "bird",
            "state",
            ["a", "b", "c"],
            DefaultMode::Categorical {
                weights: vec![0.2, 0.3, 0.5],
            },
        );
        let a = g.generate(&request(20, 7.5)).unwrap();
        let b = g.generate(&request(20, 7.5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dense_compliance_follows_the_curve() {
        let g = MockGenerator::single(
            "bird",
            "state",
            ["perched", "flying"],
            DefaultMode::Fixed { attribute: None },
        )
        .with_prompt(
            "d",
            "a flying bird",
            PromptTarget::Dense {
                concept: "bird".into(),
                attribute_type: "state".into(),
                attribute: "flying".into(),
            },
        )
        .with_compliance(Curve::Constant { p: 0.5 });
        let mut r = request(10, 7.5);
        r.prompt_id = "d".into();
        let labels = state_labels(&g.generate(&r).unwrap());
        assert_eq!(labels.iter().filter(|l| *l == "flying").count(), 5);
    }

    #[test]
    fn failing_seeds_produce_partial_batches() {
        let g = MockGenerator::single("bird", "state", ["A", "B"], DefaultMode::RoundRobin).failing_seeds([1]);
        let b = g.generate(&request(3, 7.5)).unwrap();
        assert_eq!(b.images.len(), 2);
        assert_eq!(b.failures[0].seed, 1);
    }

    fn image(labels: &[(&str, &str)]) -> ImageRef {
        ImageRef {
            id: "i".into(),
            uri: "mock://i".into(),
            prompt_id: "p".into(),
            seed: 0,
            labels: Some(labels.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()),
        }
    }

    #[test]
    fn scorer_reads_labels() {
        let s = MockScorer::new(0.9, 0.1);
        let img = image(&[("state", "flying")]);
        assert_eq!(s.score(&img, "a flying bird").unwrap(), 0.9);
        assert_eq!(s.score(&img, "a perched bird").unwrap(), 0.1);
    }

    #[test]
    fn negations_use_exact_tokens() {
        let s = MockScorer::new(0.9, 0.1);
        let without = image(&[(CONCEPT_LABEL, "bed"), ("pillows", "without pillows")]);
        let with = image(&[(CONCEPT_LABEL, "bed"), ("pillows", "with pillows")]);
        assert_eq!(s.score(&without, "a bed without pillows").unwrap(), 0.9);
        assert_eq!(s.score(&with, "a bed without pillows").unwrap(), 0.1);
        assert_eq!(s.score(&with, "a bed with pillows").unwrap(), 0.9);
    }

    #[test]
    fn concept_label_gates_queries() {
        let s = MockScorer::new(0.9, 0.1);
        let bird = image(&[(CONCEPT_LABEL, "bird"), ("state", "flying")]);
        assert_eq!(s.score(&bird, "a photo of a bird").unwrap(), 0.9);
        assert_eq!(s.score(&bird, "a photo of a dog").unwrap(), 0.1);
        assert_eq!(s.score(&bird, "a perched bird").unwrap(), 0.1);
        assert_eq!(s.score(&bird, "a flying bird").unwrap(), 0.9);
    }

    #[test]
    fn zero_noise_is_pure_and_noise_stays_in_range() {
        let s = MockScorer::new(0.9, 0.1);
        let img = image(&[("state", "flying")]);
        assert_eq!(
            s.score(&img, "a flying bird").unwrap(),
            s.score(&img.clone(), "a flying bird").unwrap()
        );
        let noisy = MockScorer::new(1.0, 0.0).with_noise(0.3);
        for t in ["a flying bird", "a perched bird", "a bird"] {
            let v = noisy.score(&img, t).unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn misconfigured_backend_is_caught_by_range_check() {
        let s = MockScorer::new(0.9, 0.1).returning(1.3);
        let q = AlignmentQuery {
            image: image(&[]),
            text: "a bird".into(),
        };
        assert_eq!(
            score_alignment(&s, &q),
            Err(AdapterError::ScoreOutOfRange { value: 1.3 })
        );
    }

    #[test]
    fn scenario_modes_deserialize() {
        let m: DefaultMode =
            serde_json::from_str(r#"{"mode":"skewed","strength":{"curve":"saturating","half":2.5}}"#).unwrap();
        assert_eq!(
            m,
            DefaultMode::Skewed {
                attribute: None,
                strength: Curve::Saturating { half: 2.5 }
            }
        );
    }
}
