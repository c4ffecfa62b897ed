//! Meta-prompt templates, the LLM backend contract, and transcript
//! recording/replay.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::AdapterError;
use crate::io::{read_append_log, AppendLog};

pub const ATTRIBUTE_EXTRACTION: &str = "attribute_extraction";
pub const PROMPT_EXPANSION: &str = "prompt_expansion";

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_][a-z0-9_]*)\}").expect("valid regex"))
}

/// Named text templates with `{placeholder}` slots. Literal JSON braces in a
/// template are left alone because they never enclose a bare identifier.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let mut templates = BTreeMap::new();
        templates.insert(
            ATTRIBUTE_EXTRACTION.to_string(),
            include_str!("../../templates/attribute_extraction.txt").to_string(),
        );
        templates.insert(
            PROMPT_EXPANSION.to_string(),
            include_str!("../../templates/prompt_expansion.txt").to_string(),
        );
        Self { templates }
    }
}

impl TemplateSet {
    pub fn empty() -> Self {
        Self {
            templates: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, body: impl Into<String>) {
        self.templates.insert(name.into(), body.into());
    }

    /// Replaces built-in templates with any `{name}.txt` found in `dir`.
    pub fn with_overrides_from(mut self, dir: &Path) -> std::io::Result<Self> {
        let names: Vec<String> = self.templates.keys().cloned().collect();
        for name in names {
            let p = dir.join(format!("{name}.txt"));
            if p.exists() {
                self.templates.insert(name, fs::read_to_string(p)?);
            }
        }
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.templates.get(name).map(String::as_str)
    }

    /// Placeholders used by a template.
    pub fn placeholders(&self, name: &str) -> Option<BTreeSet<String>> {
        let body = self.get(name)?;
        Some(placeholder_re().captures_iter(body).map(|c| c[1].to_string()).collect())
    }

    /// Fills every placeholder in one pass; substituted text is not rescanned.
    pub fn render(&self, name: &str, substitutions: &BTreeMap<String, String>) -> Result<String, AdapterError> {
        let body = self
            .get(name)
            .ok_or_else(|| AdapterError::Template(format!("unknown template {name:?}")))?;
        let mut missing = BTreeSet::new();
        let out = placeholder_re().replace_all(body, |caps: &regex::Captures| match substitutions.get(&caps[1]) {
            Some(v) => v.clone(),
            None => {
                missing.insert(caps[1].to_string());
                caps[0].to_string()
            }
        });
        if !missing.is_empty() {
            return Err(AdapterError::Template(format!(
                "template {name:?} has unfilled placeholder(s): {}",
                missing.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(out.into_owned())
    }
}

/// A rendered request. `substitutions` travel along so offline mocks can
/// answer without parsing the prompt text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub template: String,
    pub prompt: String,
    pub substitutions: BTreeMap<String, String>,
}

pub trait LlmBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Backends that tolerate parallel calls on one instance return true.
    fn concurrent_safe(&self) -> bool {
        false
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, AdapterError>;
}

/// One request/reply pair of the run log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub template: String,
    pub request: String,
    pub reply: String,
}

/// Renders templates, calls the backend and records a transcript.
pub struct LlmClient {
    backend: Box<dyn LlmBackend>,
    templates: TemplateSet,
    transcript: Mutex<Vec<TranscriptEntry>>,
    log: Option<Mutex<AppendLog>>,
    serial: Mutex<()>,
}

impl LlmClient {
    pub fn new(backend: impl LlmBackend + 'static) -> Self {
        Self::with_templates(backend, TemplateSet::default())
    }

    pub fn with_templates(backend: impl LlmBackend + 'static, templates: TemplateSet) -> Self {
        Self {
            backend: Box::new(backend),
            templates,
            transcript: Mutex::new(Vec::new()),
            log: None,
            serial: Mutex::new(()),
        }
    }

    /// Also append every exchange to a JSON Lines run log.
    pub fn logging_to(mut self, path: &Path) -> std::io::Result<Self> {
        self.log = Some(Mutex::new(AppendLog::open(path)?));
        Ok(self)
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    pub fn complete(
        &self,
        template_name: &str,
        substitutions: &BTreeMap<String, String>,
    ) -> Result<String, AdapterError> {
        let prompt = self.templates.render(template_name, substitutions)?;
        let request = LlmRequest {
            template: template_name.to_string(),
            prompt,
            substitutions: substitutions.clone(),
        };
        let reply = if self.backend.concurrent_safe() {
            self.backend.complete(&request)?
        } else {
            let _guard = self.serial.lock().expect("serial lock");
            self.backend.complete(&request)?
        };
        let entry = TranscriptEntry {
            template: request.template,
            request: request.prompt,
            reply: reply.clone(),
        };
        if let Some(log) = &self.log {
            log.lock()
                .expect("log lock")
                .append(&entry)
                .map_err(|e| AdapterError::Cache(e.to_string()))?;
        }
        self.transcript.lock().expect("transcript lock").push(entry);
        Ok(reply)
    }
}

/// Answers from a recorded transcript, keyed by the exact request text.
#[derive(Debug, Clone, Default)]
pub struct ReplayLlm {
    replies: HashMap<String, String>,
}

impl ReplayLlm {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut replies = HashMap::new();
        for e in entries {
            replies.entry(e.request).or_insert(e.reply);
        }
        Self { replies }
    }

    pub fn from_file(path: &Path) -> Result<Self, AdapterError> {
        if !path.exists() {
            return Err(AdapterError::BackendUnavailable(format!(
                "no transcript at {}",
                path.display()
            )));
        }
        let entries: Vec<TranscriptEntry> = read_append_log(path).map_err(|e| AdapterError::Protocol(e.to_string()))?;
        Ok(Self::new(entries))
    }
}

impl LlmBackend for ReplayLlm {
    fn name(&self) -> &str {
        "replay"
    }

    fn concurrent_safe(&self) -> bool {
        true
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, AdapterError> {
        self.replies
            .get(&request.prompt)
            .cloned()
            .ok_or_else(|| AdapterError::Protocol(format!("no recorded reply for a {:?} request", request.template)))
    }
}

/// Closure-backed LLM for tests and examples.
pub struct FnLlm<F>(pub F);

impl<F> LlmBackend for FnLlm<F>
where
    F: Fn(&LlmRequest) -> Result<String, AdapterError> + Send + Sync,
{
    fn name(&self) -> &str {
        "fn"
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, AdapterError> {
        (self.0)(request)
    }
}
