//! The evaluate stages (generate, score, metrics) with resumable caches.
//!
//! Each stage writes one artifact into the output directory and the next stage
//! reads only that artifact, so stages can be rerun separately:
//!
//! - `generation_manifest.jsonl`: one line per image
//! - `score_cells.jsonl`: one line per (image, attribute) score
//! - `report.json` / `report.csv`
//! - `run_manifest.json`: stage markers with output hashes
//!
//! Backend replies are cached under `cache/` and reused by `--resume` runs.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adapters::mock::{Curve, DefaultMode, MockGenerator, MockScorer};
use crate::adapters::{
    bounded_map, AdapterError, AlignmentScorer, CachedGenerator, CachedScorer, GenerationConfig, ImageGenerator,
    ImageRef,
};
use crate::analysis::{AnalysisConfig, AnalysisError};
use crate::catalog::{BenchmarkDataset, CatalogError};
use crate::io::{read_jsonl, sha256_hex, to_jsonl, write_atomic, JsonlError};
use crate::metrics::{
    cim_attribute_scores, dim_attribute_scores, dim_breakdown, pool_by_concept_type, summarize, DimAveraging,
    MetricReport, MetricsError, ReportMeta,
};
use crate::promptgen::{BuilderConfig, PromptgenError};
use crate::scoring::{
    build_score_matrix, matrices_from_cells, matrices_to_cells, MatrixSpec, ScoreCell, ScoreKind, ScoreMatrix,
    ScoringError, StyleHints,
};

pub const GENERATION_MANIFEST: &str = "generation_manifest.jsonl";
pub const SCORE_CELLS: &str = "score_cells.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const GENERATION_CACHE: &str = "cache/generation.jsonl";
pub const SCORE_CACHE: &str = "cache/scores.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Jsonl {
        path: PathBuf,
        #[source]
        source: JsonlError,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{stage} stage: {source}")]
    Backend {
        stage: &'static str,
        #[source]
        source: AdapterError,
    },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Promptgen(#[from] PromptgenError),
}

fn adapter_exit_code(e: &AdapterError) -> i32 {
    match e {
        AdapterError::Cache(_) => 1,
        _ => 3,
    }
}

impl PipelineError {
    /// 1 for I/O, 2 for invalid input or mismatched artifacts, 3 for backends.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Io { .. } => 1,
            PipelineError::Jsonl { source, .. } => match source {
                JsonlError::Io(_) => 1,
                JsonlError::Parse { .. } => 2,
            },
            PipelineError::Catalog(CatalogError::Io { .. }) => 1,
            PipelineError::Backend { source, .. } => adapter_exit_code(source),
            PipelineError::Scoring(ScoringError::Backend(e))
            | PipelineError::Metrics(MetricsError::Scoring(ScoringError::Backend(e)))
            | PipelineError::Analysis(AnalysisError::Backend(e))
            | PipelineError::Analysis(AnalysisError::Scoring(ScoringError::Backend(e)))
            | PipelineError::Promptgen(PromptgenError::Backend(e)) => adapter_exit_code(e),
            PipelineError::Promptgen(PromptgenError::Corpus(JsonlError::Io(_))) => 1,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| PipelineError::Io { path, source }
    }
}

/// How many images each coarse prompt gets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseParity {
    /// `n` times the number of dense prompts derived from the coarse prompt,
    /// so coarse and dense images are equal in total.
    #[default]
    Total,
    /// `n` per coarse prompt.
    Flat,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub generator: Option<String>,
    pub scorer: Option<String>,
    pub llm: Option<String>,
}

/// Everything a run needs besides the backends; read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub model_id: String,
    pub endpoints: Endpoints,
    pub timeout_secs: u64,
    /// Cap on in-flight backend calls, on top of each backend's own cap.
    pub max_concurrency: usize,
    pub n_images: usize,
    pub guidance_scale: f64,
    pub seed: u64,
    pub coarse_parity: CoarseParity,
    pub dim_averaging: DimAveraging,
    /// Forwarded untouched to the generator (resolution, steps, ...).
    pub generator_params: BTreeMap<String, serde_json::Value>,
    pub style_hints: StyleHints,
    pub templates_dir: Option<PathBuf>,
    pub mock_scenario: Option<PathBuf>,
    pub analysis: AnalysisConfig,
    pub builder: BuilderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let g = GenerationConfig::default();
        Self {
            dataset: None,
            output_dir: PathBuf::from("dimcim-out"),
            model_id: "model".into(),
            endpoints: Endpoints::default(),
            timeout_secs: 300,
            max_concurrency: 8,
            n_images: g.n_images,
            guidance_scale: g.guidance_scale,
            seed: g.base_seed,
            coarse_parity: CoarseParity::Total,
            dim_averaging: DimAveraging::Entries,
            generator_params: BTreeMap::new(),
            style_hints: StyleHints::new(),
            templates_dir: None,
            mock_scenario: None,
            analysis: AnalysisConfig::default(),
            builder: BuilderConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
        Self::from_toml_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn generation_config(&self) -> GenerationConfig {
        GenerationConfig {
            n_images: self.n_images,
            guidance_scale: self.guidance_scale,
            base_seed: self.seed,
        }
    }

    fn hints(&self) -> Option<&StyleHints> {
        (!self.style_hints.is_empty()).then_some(&self.style_hints)
    }
}

/// One prompt to generate images for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptJob {
    pub prompt_id: String,
    pub text: String,
    pub n_images: usize,
}

/// Coarse prompts first, then dense prompts, in dataset order.
pub fn plan_generation(dataset: &BenchmarkDataset, n: usize, parity: CoarseParity) -> Vec<PromptJob> {
    let mut dense_per_coarse: HashMap<&str, usize> = HashMap::new();
    for d in &dataset.dense_prompts {
        *dense_per_coarse.entry(&d.coarse_id).or_default() += 1;
    }
    let coarse = dataset.coarse_prompts.iter().map(|c| {
        let n_images = match parity {
            CoarseParity::Flat => n,
            // A coarse prompt without dense prompts still gets n images.
            CoarseParity::Total => n * dense_per_coarse.get(c.id.as_str()).copied().unwrap_or(1).max(1),
        };
        PromptJob {
            prompt_id: c.id.clone(),
            text: c.text.clone(),
            n_images,
        }
    });
    let dense = dataset.dense_prompts.iter().map(|d| PromptJob {
        prompt_id: d.id.clone(),
        text: d.text.clone(),
        n_images: n,
    });
    coarse.chain(dense).collect()
}

/// One line of the generation manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub prompt_id: String,
    pub image_id: String,
    pub uri: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeMap<String, String>>,
}

impl From<&ImageRef> for ManifestRecord {
    fn from(i: &ImageRef) -> Self {
        Self {
            prompt_id: i.prompt_id.clone(),
            image_id: i.id.clone(),
            uri: i.uri.clone(),
            seed: i.seed,
            labels: i.labels.clone(),
        }
    }
}

impl ManifestRecord {
    pub fn to_image_ref(&self) -> ImageRef {
        ImageRef {
            id: self.image_id.clone(),
            uri: self.uri.clone(),
            prompt_id: self.prompt_id.clone(),
            seed: self.seed,
            labels: self.labels.clone(),
        }
    }
}

/// Generates images for every job, stopping at the first backend-level
/// failure. Per-prompt failures are returned as warnings.
pub fn generate_images<G: ImageGenerator>(
    jobs: &[PromptJob],
    generator: &CachedGenerator<G>,
    config: &PipelineConfig,
) -> Result<(Vec<ImageRef>, Vec<String>), PipelineError> {
    let limit = config.max_concurrency.min(generator.max_concurrency()).max(1);
    let results = bounded_map(jobs, limit, |job| {
        let g = GenerationConfig {
            n_images: job.n_images,
            ..config.generation_config()
        };
        generator.generate(&job.prompt_id, &job.text, &g, &config.generator_params)
    });
    let mut images = Vec::new();
    let mut warnings = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(out) => {
                if !out.failures.is_empty() {
                    warnings.push(format!(
                        "{}: {} of {} images failed",
                        job.prompt_id,
                        out.failures.len(),
                        job.n_images
                    ));
                }
                images.extend(out.images);
            }
            Err(e) if e.is_fatal() => {
                return Err(PipelineError::Backend {
                    stage: "generate",
                    source: e,
                })
            }
            Err(e) => warnings.push(format!("{}: no images: {e}", job.prompt_id)),
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((images, warnings))
}

/// Scores each coarse prompt's images against every attribute type of its
/// concept and each dense prompt's images against its own type.
pub fn score_images(
    dataset: &BenchmarkDataset,
    images: &[ImageRef],
    scorer: &dyn AlignmentScorer,
    hints: Option<&StyleHints>,
) -> Result<(Vec<ScoreMatrix>, Vec<String>), PipelineError> {
    let mut by_prompt: HashMap<&str, Vec<ImageRef>> = HashMap::new();
    for i in images {
        by_prompt.entry(&i.prompt_id).or_default().push(i.clone());
    }
    let mut specs: Vec<MatrixSpec> = Vec::new();
    for c in &dataset.coarse_prompts {
        let Some(concept) = dataset.concept(&c.concept) else {
            continue;
        };
        for t in &concept.attribute_types {
            specs.push(MatrixSpec {
                unit_id: &c.id,
                concept: &c.concept,
                attribute_type: &t.name,
                attributes: &t.attributes,
                kind: ScoreKind::Coarse,
            });
        }
    }
    for d in &dataset.dense_prompts {
        let Some(t) = dataset.attribute_type(&d.concept, &d.attribute_type) else {
            continue;
        };
        specs.push(MatrixSpec {
            unit_id: &d.id,
            concept: &d.concept,
            attribute_type: &t.name,
            attributes: &t.attributes,
            kind: ScoreKind::Dense,
        });
    }
    let mut matrices = Vec::with_capacity(specs.len());
    let mut warnings = Vec::new();
    for spec in specs {
        let imgs = by_prompt.get(spec.unit_id).map(Vec::as_slice).unwrap_or(&[]);
        match build_score_matrix(spec, imgs, scorer, hints) {
            Ok(m) => {
                if !m.dropped.is_empty() {
                    warnings.push(format!(
                        "{}/{}: {} image(s) dropped",
                        spec.unit_id,
                        spec.attribute_type,
                        m.dropped.len()
                    ));
                }
                matrices.push(m);
            }
            Err(e @ (ScoringError::NoImages { .. } | ScoringError::EmptyMatrix { .. })) => {
                warnings.push(format!("{}/{}: skipped: {e}", spec.unit_id, spec.attribute_type));
            }
            Err(ScoringError::Backend(e)) => {
                return Err(PipelineError::Backend {
                    stage: "score",
                    source: e,
                })
            }
            Err(e) => return Err(e.into()),
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((matrices, warnings))
}

/// Rebuilds matrices from score cells and computes the report.
pub fn compute_report(
    dataset: &BenchmarkDataset,
    cells: &[ScoreCell],
    meta: ReportMeta,
) -> Result<MetricReport, PipelineError> {
    let matrices = matrices_from_cells(cells, |unit| {
        if dataset.coarse_prompt(unit).is_some() {
            ScoreKind::Coarse
        } else {
            ScoreKind::Dense
        }
    })?;
    let (coarse, dense): (Vec<ScoreMatrix>, Vec<ScoreMatrix>) =
        matrices.into_iter().partition(|m| m.kind == ScoreKind::Coarse);
    let pooled = pool_by_concept_type(&coarse)?;
    let dim = dim_attribute_scores(&pooled)?;
    let breakdown = dim_breakdown(&coarse)?;
    let cim = cim_attribute_scores(&dense, dataset)?;
    Ok(summarize(meta, dim, breakdown, cim)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub completed: bool,
    pub outputs: Vec<ArtifactRecord>,
    pub backend_calls: usize,
    pub elapsed_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub dataset_hash: String,
    pub model_id: String,
    pub config: GenerationConfig,
    pub coarse_parity: CoarseParity,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub generator_params: BTreeMap<String, serde_json::Value>,
    /// Backend name -> endpoint it was reached at.
    pub endpoints: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Reuse cached backend replies from an earlier (possibly interrupted) run.
    pub resume: bool,
    /// Recorded in the run manifest.
    pub endpoints: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct Evaluation {
    pub report: MetricReport,
    pub manifest: RunManifest,
}

struct RunWriter<'a> {
    dir: &'a Path,
    manifest: RunManifest,
}

impl RunWriter<'_> {
    fn write(&self, name: &str, bytes: &[u8]) -> Result<ArtifactRecord, PipelineError> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes).map_err(PipelineError::io(&path))?;
        Ok(ArtifactRecord {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        })
    }

    fn finish_stage(&mut self, stage: StageRecord) -> Result<(), PipelineError> {
        self.manifest.stages.retain(|s| s.name != stage.name);
        self.manifest.stages.push(stage);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n";
        self.write(RUN_MANIFEST, text.as_bytes())?;
        Ok(())
    }
}

fn stage(
    name: &str,
    started: Instant,
    outputs: Vec<ArtifactRecord>,
    backend_calls: usize,
    warnings: Vec<String>,
) -> StageRecord {
    StageRecord {
        name: name.to_string(),
        completed: true,
        outputs,
        backend_calls,
        elapsed_ms: started.elapsed().as_millis() as u64,
        warnings,
    }
}

/// Runs generate, score and metrics for one model and writes every artifact
/// into `config.output_dir`.
///
/// Without `resume` the caches are cleared first. With it, cached images and
/// scores are reused, so a run interrupted at any point finishes with the
/// same report as an uninterrupted one.
pub fn evaluate<G: ImageGenerator, S: AlignmentScorer>(
    dataset: &BenchmarkDataset,
    config: &PipelineConfig,
    generator: G,
    scorer: S,
    options: &RunOptions,
) -> Result<Evaluation, PipelineError> {
    let dir = config.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    let gen_cache = dir.join(GENERATION_CACHE);
    let score_cache = dir.join(SCORE_CACHE);
    if !options.resume {
        for p in [&gen_cache, &score_cache] {
            match std::fs::remove_file(p) {
                Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(PipelineError::io(p)(e)),
                _ => {}
            }
        }
    }
    let generation = config.generation_config();
    generation
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let dataset_hash = dataset.content_hash();
    let run_key = serde_json::to_string(&(
        &dataset_hash,
        &config.model_id,
        &generation,
        &config.coarse_parity,
        &config.generator_params,
    ))
    .expect("run key serializes");
    let mut writer = RunWriter {
        dir,
        manifest: RunManifest {
            run_id: sha256_hex(run_key.as_bytes())[..16].to_string(),
            dataset_hash: dataset_hash.clone(),
            model_id: config.model_id.clone(),
            config: generation.clone(),
            coarse_parity: config.coarse_parity,
            generator_params: config.generator_params.clone(),
            endpoints: options.endpoints.clone(),
            stages: Vec::new(),
        },
    };

    let started = Instant::now();
    let cached_gen = CachedGenerator::open(generator, &gen_cache).map_err(|e| PipelineError::Backend {
        stage: "generate",
        source: e,
    })?;
    let jobs = plan_generation(dataset, config.n_images, config.coarse_parity);
    let (images, warnings) = generate_images(&jobs, &cached_gen, config)?;
    let records: Vec<ManifestRecord> = images.iter().map(ManifestRecord::from).collect();
    let out = writer.write(GENERATION_MANIFEST, &to_jsonl(&records).expect("manifest serializes"))?;
    writer.finish_stage(stage(
        "generate",
        started,
        vec![out],
        cached_gen.backend_calls(),
        warnings,
    ))?;

    let started = Instant::now();
    let cached_scorer = CachedScorer::open(scorer, &score_cache).map_err(|e| PipelineError::Backend {
        stage: "score",
        source: e,
    })?;
    let (matrices, warnings) = score_images(dataset, &images, &cached_scorer, config.hints())?;
    let cells = matrices_to_cells(&matrices);
    let out = writer.write(SCORE_CELLS, &to_jsonl(&cells).expect("cells serialize"))?;
    writer.finish_stage(stage(
        "score",
        started,
        vec![out],
        cached_scorer.backend_calls(),
        warnings,
    ))?;

    let started = Instant::now();
    let meta = ReportMeta {
        model_id: config.model_id.clone(),
        dataset_hash,
        config: Some(generation),
        dim_averaging: config.dim_averaging,
    };
    let report = compute_report(dataset, &cells, meta)?;
    let json = writer.write(REPORT_JSON, report.to_json_string().as_bytes())?;
    let csv = writer.write(REPORT_CSV, &report.to_csv()?)?;
    writer.finish_stage(stage("metrics", started, vec![json, csv], 0, Vec::new()))?;
    Ok(Evaluation {
        report,
        manifest: writer.manifest,
    })
}

pub fn read_manifest(path: &Path) -> Result<Vec<ImageRef>, PipelineError> {
    let records: Vec<ManifestRecord> = read_jsonl(path).map_err(|source| PipelineError::Jsonl {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(records.iter().map(ManifestRecord::to_image_ref).collect())
}

pub fn read_cells(path: &Path) -> Result<Vec<ScoreCell>, PipelineError> {
    read_jsonl(path).map_err(|source| PipelineError::Jsonl {
        path: path.to_path_buf(),
        source,
    })
}

fn default_mode() -> DefaultMode {
    DefaultMode::RoundRobin
}

fn always() -> Curve {
    Curve::Constant { p: 1.0 }
}

/// Offline backends for `--mock` runs, read from JSON.
///
/// ```json
/// {"default_mode": {"mode": "fixed"},
///  "overrides": {"bird/state": {"mode": "round_robin"}},
///  "compliance": {"curve": "saturating", "half": 2.0},
///  "s_hi": 0.9, "s_lo": 0.1}
/// ```
///
/// Override keys are `concept/type` or `concept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockScenario {
    #[serde(default = "default_mode")]
    pub default_mode: DefaultMode,
    pub overrides: BTreeMap<String, DefaultMode>,
    #[serde(default = "always")]
    pub compliance: Curve,
    pub failing_seeds: Vec<u64>,
    pub s_hi: f64,
    pub s_lo: f64,
    pub noise: f64,
    pub failing_images: Vec<String>,
}

impl Default for MockScenario {
    fn default() -> Self {
        Self {
            default_mode: default_mode(),
            overrides: BTreeMap::new(),
            compliance: always(),
            failing_seeds: Vec::new(),
            s_hi: 0.9,
            s_lo: 0.1,
            noise: 0.0,
            failing_images: Vec::new(),
        }
    }
}

impl MockScenario {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn generator(&self, dataset: &BenchmarkDataset) -> MockGenerator {
        MockGenerator::from_dataset(dataset, |c, t| {
            self.overrides
                .get(&format!("{c}/{t}"))
                .or_else(|| self.overrides.get(c))
                .unwrap_or(&self.default_mode)
                .clone()
        })
        .with_compliance(self.compliance.clone())
        .failing_seeds(self.failing_seeds.iter().copied())
    }

    pub fn scorer(&self) -> MockScorer {
        MockScorer::new(self.s_hi, self.s_lo)
            .with_noise(self.noise)
            .failing_on(self.failing_images.iter().cloned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::tests::minimal;

    fn config(dir: &Path) -> PipelineConfig {
        PipelineConfig {
            output_dir: dir.to_path_buf(),
            n_images: 4,
            ..Default::default()
        }
    }

    #[test]
    fn parity_modes() {
        let ds = minimal();
        let total = plan_generation(&ds, 30, CoarseParity::Total);
        assert_eq!(total[0].n_images, 60);
        assert_eq!(total.len(), 3);
        assert!(total[1..].iter().all(|j| j.n_images == 30));
        let flat = plan_generation(&ds, 30, CoarseParity::Flat);
        assert_eq!(flat[0].n_images, 30);
        let coarse: usize = total
            .iter()
            .filter(|j| j.prompt_id.contains("-cp-"))
            .map(|j| j.n_images)
            .sum();
        let dense: usize = total
            .iter()
            .filter(|j| j.prompt_id.contains("-dp-"))
            .map(|j| j.n_images)
            .sum();
        assert_eq!(coarse, dense);
    }

    #[test]
    fn config_defaults_and_toml() {
        let c = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(
            (c.n_images, c.guidance_scale, c.coarse_parity),
            (30, 7.5, CoarseParity::Total)
        );
        assert_eq!(c.analysis.filter_threshold, 0.8);
        let c = PipelineConfig::from_toml_str(
            "n_images = 5\ncoarse_parity = \"flat\"\n[generator_params]\nsteps = 50\n[analysis]\ntau_can = 0.4\n[endpoints]\nscorer = \"http://x\"\n",
        )
        .unwrap();
        assert_eq!(c.n_images, 5);
        assert_eq!(c.coarse_parity, CoarseParity::Flat);
        assert_eq!(c.generator_params["steps"], serde_json::json!(50));
        assert_eq!(c.analysis.tau_can, 0.4);
        assert_eq!(c.endpoints.scorer.as_deref(), Some("http://x"));
        assert!(PipelineConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn skewed_mock_run() {
        let dir = tempfile::tempdir().unwrap();
        let ds = minimal();
        let scenario = MockScenario {
            default_mode: DefaultMode::Fixed { attribute: None },
            ..Default::default()
        };
        let e = evaluate(
            &ds,
            &config(dir.path()),
            scenario.generator(&ds),
            scenario.scorer(),
            &RunOptions::default(),
        )
        .unwrap();
        assert!((e.report.summary.dim - 0.2).abs() < 1e-9);
        assert!((e.report.summary.cim - 0.8).abs() < 1e-9);
        for name in [GENERATION_MANIFEST, SCORE_CELLS, REPORT_JSON, REPORT_CSV, RUN_MANIFEST] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        let m = RunManifest::load(&dir.path().join(RUN_MANIFEST)).unwrap();
        assert_eq!(m.stages.len(), 3);
        let report_bytes = std::fs::read(dir.path().join(REPORT_JSON)).unwrap();
        assert_eq!(m.stage("metrics").unwrap().outputs[0].sha256, sha256_hex(&report_bytes));
        // 8 coarse images (total parity) plus 4 per dense prompt.
        assert_eq!(read_manifest(&dir.path().join(GENERATION_MANIFEST)).unwrap().len(), 16);
    }

    #[test]
    fn metrics_recompute_from_cells() {
        let dir = tempfile::tempdir().unwrap();
        let ds = minimal();
        let s = MockScenario::default();
        let e = evaluate(
            &ds,
            &config(dir.path()),
            s.generator(&ds),
            s.scorer(),
            &RunOptions::default(),
        )
        .unwrap();
        let cells = read_cells(&dir.path().join(SCORE_CELLS)).unwrap();
        let meta = ReportMeta {
            model_id: e.report.model_id.clone(),
            dataset_hash: e.report.dataset_hash.clone(),
            config: e.report.config.clone(),
            dim_averaging: DimAveraging::Entries,
        };
        assert_eq!(compute_report(&ds, &cells, meta).unwrap(), e.report);
        assert!((e.report.summary.dim - 1.0).abs() < 1e-9);
    }

    #[test]
    fn backend_failure_maps_to_exit_3() {
        let dir = tempfile::tempdir().unwrap();
        let ds = minimal();
        let s = MockScenario::default();
        let err = evaluate(
            &ds,
            &config(dir.path()),
            s.generator(&ds),
            MockScorer::new(0.9, 0.1).returning(1.5),
            &RunOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let m = RunManifest::load(&dir.path().join(RUN_MANIFEST)).unwrap();
        assert!(m.stage("generate").unwrap().completed);
        assert!(m.stage("score").is_none());
    }
}
