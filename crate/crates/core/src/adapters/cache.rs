use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::{
    AdapterError, AlignmentScorer, GeneratedImage, GenerationConfig, GenerationFailureRecord, GenerationRequest,
    ImageGenerator, ImageRef,
};
use crate::io::{read_append_log, sha256_hex, AppendLog};

/// One line of the score cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCacheRecord {
    pub image_id: String,
    pub text: String,
    pub score: f64,
}

type Cell<T> = Arc<OnceLock<Result<T, AdapterError>>>;

fn cache_err(e: impl std::fmt::Display) -> AdapterError {
    AdapterError::Cache(e.to_string())
}

/// Scorer wrapper that answers repeated `(image id, text)` requests from an
/// in-memory index backed by an append-only JSON Lines file.
pub struct CachedScorer<S> {
    inner: S,
    cells: Mutex<HashMap<(String, String), Cell<f64>>>,
    log: Option<Mutex<AppendLog>>,
    backend_calls: AtomicUsize,
}

impl<S: AlignmentScorer> CachedScorer<S> {
    /// In-memory only.
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            cells: Mutex::new(HashMap::new()),
            log: None,
            backend_calls: AtomicUsize::new(0),
        }
    }

    /// Loads previously cached scores from `path` and appends new ones to it.
    pub fn open(inner: S, path: &Path) -> Result<Self, AdapterError> {
        let records: Vec<ScoreCacheRecord> = read_append_log(path).map_err(cache_err)?;
        let mut cells = HashMap::with_capacity(records.len());
        for r in records {
            cells.insert((r.image_id, r.text), Arc::new(OnceLock::from(Ok(r.score))));
        }
        Ok(Self {
            inner,
            cells: Mutex::new(cells),
            log: Some(Mutex::new(AppendLog::open(path).map_err(cache_err)?)),
            backend_calls: AtomicUsize::new(0),
        })
    }

    /// Number of requests that reached the wrapped backend.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn cached_len(&self) -> usize {
        self.cells.lock().expect("cache lock").len()
    }

    fn fetch(&self, image: &ImageRef, text: &str) -> Result<f64, AdapterError> {
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        let value = self.inner.score(image, text)?;
        if (0.0..=1.0).contains(&value) {
            if let Some(log) = &self.log {
                let record = ScoreCacheRecord {
                    image_id: image.id.clone(),
                    text: text.to_string(),
                    score: value,
                };
                log.lock().expect("log lock").append(&record).map_err(cache_err)?;
            }
        }
        Ok(value)
    }
}

impl<S: AlignmentScorer> AlignmentScorer for CachedScorer<S> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn max_concurrency(&self) -> usize {
        self.inner.max_concurrency()
    }

    fn score(&self, image: &ImageRef, text: &str) -> Result<f64, AdapterError> {
        let key = (image.id.clone(), text.to_string());
        let cell = self
            .cells
            .lock()
            .expect("cache lock")
            .entry(key.clone())
            .or_default()
            .clone();
        let result = cell.get_or_init(|| self.fetch(image, text)).clone();
        if result.is_err() {
            let mut cells = self.cells.lock().expect("cache lock");
            if cells.get(&key).is_some_and(|c| Arc::ptr_eq(c, &cell)) {
                cells.remove(&key);
            }
        }
        result
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GenerationCacheRecord {
    request_hash: String,
    prompt_id: String,
    images: Vec<GeneratedImage>,
    #[serde(default)]
    failures: Vec<GenerationFailureRecord>,
}

/// Images for one prompt, with run-unique ids of the form `{prompt_id}/{backend id}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub images: Vec<ImageRef>,
    pub failures: Vec<GenerationFailureRecord>,
}

/// Generator wrapper keyed by a content hash of the full request.
pub struct CachedGenerator<G> {
    inner: G,
    cells: Mutex<HashMap<String, Cell<GenerationCacheRecord>>>,
    log: Option<Mutex<AppendLog>>,
    backend_calls: AtomicUsize,
}

impl<G: ImageGenerator> CachedGenerator<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            cells: Mutex::new(HashMap::new()),
            log: None,
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn open(inner: G, path: &Path) -> Result<Self, AdapterError> {
        let records: Vec<GenerationCacheRecord> = read_append_log(path).map_err(cache_err)?;
        let mut cells = HashMap::with_capacity(records.len());
        for r in records {
            cells.insert(r.request_hash.clone(), Arc::new(OnceLock::from(Ok(r))));
        }
        Ok(Self {
            inner,
            cells: Mutex::new(cells),
            log: Some(Mutex::new(AppendLog::open(path).map_err(cache_err)?)),
            backend_calls: AtomicUsize::new(0),
        })
    }

    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn max_concurrency(&self) -> usize {
        self.inner.max_concurrency()
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }

    /// Generates `config.n_images` images for a prompt, seeds
    /// `base_seed..base_seed + n`.
    pub fn generate(
        &self,
        prompt_id: &str,
        prompt: &str,
        config: &GenerationConfig,
        params: &BTreeMap<String, serde_json::Value>,
    ) -> Result<GenerationOutcome, AdapterError> {
        config.validate()?;
        let request = GenerationRequest {
            prompt_id: prompt_id.to_string(),
            prompt: prompt.to_string(),
            n: config.n_images,
            guidance_scale: config.guidance_scale,
            base_seed: config.base_seed,
            params: params.clone(),
        };
        let hash = sha256_hex(&serde_json::to_vec(&request).map_err(cache_err)?);
        let cell = self
            .cells
            .lock()
            .expect("cache lock")
            .entry(hash.clone())
            .or_default()
            .clone();
        let result = cell.get_or_init(|| self.fetch(&request, &hash)).clone();
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                let mut cells = self.cells.lock().expect("cache lock");
                if cells.get(&hash).is_some_and(|c| Arc::ptr_eq(c, &cell)) {
                    cells.remove(&hash);
                }
                return Err(e);
            }
        };
        let images = record
            .images
            .into_iter()
            .map(|g| ImageRef {
                id: format!("{prompt_id}/{}", g.id),
                uri: g.uri,
                prompt_id: prompt_id.to_string(),
                seed: g.seed,
                labels: g.labels,
            })
            .collect();
        Ok(GenerationOutcome {
            images,
            failures: record.failures,
        })
    }

    fn fetch(&self, request: &GenerationRequest, hash: &str) -> Result<GenerationCacheRecord, AdapterError> {
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        let batch = self.inner.generate(request)?;
        let seeds = request.base_seed..request.base_seed + request.n as u64;
        if batch.images.len() + batch.failures.len() > request.n
            || batch.images.iter().any(|i| !seeds.contains(&i.seed))
        {
            return Err(AdapterError::Protocol(format!(
                "generator returned images outside the requested seed range for {}",
                request.prompt_id
            )));
        }
        let record = GenerationCacheRecord {
            request_hash: hash.to_string(),
            prompt_id: request.prompt_id.clone(),
            images: batch.images,
            failures: batch.failures,
        };
        if let Some(log) = &self.log {
            log.lock().expect("log lock").append(&record).map_err(cache_err)?;
        }
        Ok(record)
    }
}
