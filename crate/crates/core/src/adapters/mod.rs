//! Contracts for the three external models (image generator, alignment
//! scorer, LLM), a request cache in front of each, deterministic mocks, and
//! HTTP clients speaking the JSON wire protocol.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

mod cache;
pub mod http;
pub mod llm;
pub mod mock;

pub use cache::{CachedGenerator, CachedScorer, GenerationOutcome, ScoreCacheRecord};
pub use llm::{FnLlm, LlmBackend, LlmClient, LlmRequest, ReplayLlm, TemplateSet, TranscriptEntry};

/// Label key under which mocks record the depicted concept.
pub const CONCEPT_LABEL: &str = "_concept";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdapterError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("generation failed: {0}")]
    GenerationFailure(String),
    #[error("scorer returned {value}, outside [0, 1]")]
    ScoreOutOfRange { value: f64 },
    #[error("image {image_id}: {message}")]
    ImageFailure { image_id: String, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("cache I/O: {0}")]
    Cache(String),
}

impl AdapterError {
    /// Errors that should abort a stage rather than drop a single image. An
    /// out-of-range score means the backend is misconfigured, not that one
    /// image is bad.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            AdapterError::BackendUnavailable(_) | AdapterError::Cache(_) | AdapterError::ScoreOutOfRange { .. }
        )
    }
}

/// A generated (or corpus) image. Only the scorer backend looks inside `uri`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub uri: String,
    pub prompt_id: String,
    pub seed: u64,
    /// Mock-only ground truth: attribute type -> attribute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_images: usize,
    pub guidance_scale: f64,
    pub base_seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_images: 30,
            guidance_scale: 7.5,
            base_seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), AdapterError> {
        if self.n_images == 0 {
            return Err(AdapterError::Protocol("n_images must be at least 1".into()));
        }
        if !self.guidance_scale.is_finite() || self.guidance_scale <= 0.0 {
            return Err(AdapterError::Protocol(format!(
                "guidance_scale must be positive, got {}",
                self.guidance_scale
            )));
        }
        Ok(())
    }
}

/// One call to an image generator backend.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationRequest {
    pub prompt_id: String,
    pub prompt: String,
    pub n: usize,
    pub guidance_scale: f64,
    pub base_seed: u64,
    /// Opaque backend parameters (resolution, steps, ...), forwarded untouched.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedImage {
    pub id: String,
    pub uri: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationFailureRecord {
    pub seed: u64,
    pub message: String,
}

/// Backend reply: images that succeeded plus per-image failures.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationBatch {
    pub images: Vec<GeneratedImage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<GenerationFailureRecord>,
}

pub trait ImageGenerator: Send + Sync {
    fn name(&self) -> &str;

    /// Upper bound on in-flight requests the pipeline may issue.
    fn max_concurrency(&self) -> usize {
        1
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationBatch, AdapterError>;
}

/// Image plus the truncated concept-attribute phrase to check for.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentQuery {
    pub image: ImageRef,
    pub text: String,
}

pub trait AlignmentScorer: Send + Sync {
    fn name(&self) -> &str;

    fn max_concurrency(&self) -> usize {
        1
    }

    /// Raw yes-probability; callers go through [`score_alignment`] for range checks.
    fn score(&self, image: &ImageRef, text: &str) -> Result<f64, AdapterError>;
}

macro_rules! forward_backend {
    ($($ptr:ident),*) => {$(
        impl<T: ImageGenerator + ?Sized> ImageGenerator for $ptr<T> {
            fn name(&self) -> &str {
                (**self).name()
            }

            fn max_concurrency(&self) -> usize {
                (**self).max_concurrency()
            }

            fn generate(&self, request: &GenerationRequest) -> Result<GenerationBatch, AdapterError> {
                (**self).generate(request)
            }
        }

        impl<T: AlignmentScorer + ?Sized> AlignmentScorer for $ptr<T> {
            fn name(&self) -> &str {
                (**self).name()
            }

            fn max_concurrency(&self) -> usize {
                (**self).max_concurrency()
            }

            fn score(&self, image: &ImageRef, text: &str) -> Result<f64, AdapterError> {
                (**self).score(image, text)
            }
        }
    )*};
}

forward_backend!(Box, Arc);

/// Scores one query, rejecting values outside `[0, 1]`.
pub fn score_alignment(scorer: &dyn AlignmentScorer, query: &AlignmentQuery) -> Result<f64, AdapterError> {
    if query.text.trim().is_empty() {
        return Err(AdapterError::Protocol("alignment query text is empty".into()));
    }
    let value = scorer.score(&query.image, &query.text)?;
    if !(0.0..=1.0).contains(&value) {
        return Err(AdapterError::ScoreOutOfRange { value });
    }
    Ok(value)
}

/// Runs `f` over `items` with at most `limit` worker threads; output order
/// matches input order.
pub(crate) fn bounded_map<T, R, F>(items: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = limit
        .min(items.len())
        .min(std::thread::available_parallelism().map_or(4, |n| n.get()))
        .max(1);
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = std::iter::repeat_with(|| None).take(items.len()).collect();
    let results = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break;
                        }
                        local.push((i, f(&items[i])));
                    }
                    local
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect::<Vec<_>>()
    });
    for (i, r) in results {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|r| r.expect("every index visited")).collect()
}
