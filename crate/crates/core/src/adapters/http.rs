//! Blocking HTTP clients for remote generator, scorer and LLM services.
//!
//! Wire format (JSON bodies, POST):
//!
//! - generator: `{"prompt", "n", "guidance_scale", "seed", "params"?}` -> `{"images": [{"id", "uri"}]}`
//! - scorer: `{"image_uri", "text"}` -> `{"score": number}`
//! - LLM: `{"prompt", "temperature"}` -> `{"completion": string}`

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use super::{
    AdapterError, AlignmentScorer, GeneratedImage, GenerationBatch, GenerationFailureRecord, GenerationRequest,
    ImageGenerator, ImageRef, LlmBackend, LlmRequest,
};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::AgentBuilder::new().timeout(timeout).build()
}

fn post<T: DeserializeOwned>(agent: &ureq::Agent, url: &str, body: serde_json::Value) -> Result<T, AdapterError> {
    match agent.post(url).send_json(body) {
        Ok(resp) => resp
            .into_json::<T>()
            .map_err(|e| AdapterError::Protocol(format!("{url}: malformed response: {e}"))),
        Err(ureq::Error::Status(code, resp)) if code >= 500 || code == 429 => {
            let body = resp.into_string().unwrap_or_default();
            Err(AdapterError::BackendUnavailable(format!("{url}: HTTP {code}: {body}")))
        }
        Err(ureq::Error::Status(code, resp)) => {
            let body = resp.into_string().unwrap_or_default();
            Err(AdapterError::Protocol(format!("{url}: HTTP {code}: {body}")))
        }
        Err(ureq::Error::Transport(t)) => Err(AdapterError::BackendUnavailable(t.to_string())),
    }
}

#[derive(Debug, Deserialize)]
struct WireImage {
    id: String,
    uri: String,
}

#[derive(Debug, Deserialize)]
struct GenerateReply {
    images: Vec<WireImage>,
}

pub struct HttpGenerator {
    url: String,
    agent: ureq::Agent,
    max_concurrency: usize,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>, timeout: Duration, max_concurrency: usize) -> Self {
        Self {
            url: url.into(),
            agent: agent(timeout),
            max_concurrency: max_concurrency.max(1),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl ImageGenerator for HttpGenerator {
    fn name(&self) -> &str {
        "http-generator"
    }

    fn max_concurrency(&self) -> usize {
        self.max_concurrency
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationBatch, AdapterError> {
        let mut body = json!({
            "prompt": request.prompt,
            "n": request.n,
            "guidance_scale": request.guidance_scale,
            "seed": request.base_seed,
        });
        if !request.params.is_empty() {
            body["params"] = serde_json::to_value(&request.params).expect("params are JSON");
        }
        let reply: GenerateReply = post(&self.agent, &self.url, body)?;
        if reply.images.len() > request.n {
            return Err(AdapterError::Protocol(format!(
                "{}: asked for {} images, got {}",
                self.url,
                request.n,
                reply.images.len()
            )));
        }
        // Images come back in seed order; any shortfall is a per-image failure.
        let mut batch = GenerationBatch::default();
        for (i, img) in reply.images.into_iter().enumerate() {
            batch.images.push(GeneratedImage {
                id: img.id,
                uri: img.uri,
                seed: request.base_seed + i as u64,
                labels: None,
            });
        }
        for i in batch.images.len()..request.n {
            batch.failures.push(GenerationFailureRecord {
                seed: request.base_seed + i as u64,
                message: "backend returned fewer images than requested".into(),
            });
        }
        Ok(batch)
    }
}

#[derive(Debug, Deserialize)]
struct ScoreReply {
    score: f64,
}

pub struct HttpScorer {
    url: String,
    agent: ureq::Agent,
    max_concurrency: usize,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>, timeout: Duration, max_concurrency: usize) -> Self {
        Self {
            url: url.into(),
            agent: agent(timeout),
            max_concurrency: max_concurrency.max(1),
        }
    }
}

impl AlignmentScorer for HttpScorer {
    fn name(&self) -> &str {
        "http-scorer"
    }

    fn max_concurrency(&self) -> usize {
        self.max_concurrency
    }

    fn score(&self, image: &ImageRef, text: &str) -> Result<f64, AdapterError> {
        let reply: ScoreReply = post(&self.agent, &self.url, json!({ "image_uri": image.uri, "text": text }))?;
        Ok(reply.score)
    }
}

#[derive(Debug, Deserialize)]
struct CompletionReply {
    completion: String,
}

/// Remote LLM, always asked for temperature 0.
pub struct HttpLlm {
    url: String,
    agent: ureq::Agent,
}

impl HttpLlm {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            agent: agent(timeout),
        }
    }
}

impl LlmBackend for HttpLlm {
    fn name(&self) -> &str {
        "http-llm"
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, AdapterError> {
        let reply: CompletionReply = post(
            &self.agent,
            &self.url,
            json!({ "prompt": request.prompt, "temperature": 0.0 }),
        )?;
        Ok(reply.completion)
    }
}
