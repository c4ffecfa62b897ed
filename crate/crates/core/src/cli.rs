//! The `dimcim` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::adapters::http::{HttpGenerator, HttpLlm, HttpScorer};
use crate::adapters::{AlignmentScorer, CachedScorer, ImageGenerator, LlmClient, TemplateSet};
use crate::analysis::{
    audit_csv, classify_quadrants, correlate, filter_training_images, findings_csv, join_audit, negation_audit,
    training_dim, CorpusImage, TrainingAuditResult,
};
use crate::catalog::{load_dataset, save_dataset, BenchmarkDataset};
use crate::figures::{audit_scatter_spec, file_stem, report_figure, Figure};
use crate::io::{read_jsonl, to_jsonl, write_atomic};
use crate::metrics::{compare_reports, DimAveraging, MetricReport, MetricsError, ReportMeta};
use crate::pipeline::{
    compute_report, evaluate, read_cells, read_manifest, score_images, CoarseParity, MockScenario, PipelineConfig,
    PipelineError, RunOptions, GENERATION_MANIFEST, REPORT_CSV, REPORT_JSON, SCORE_CACHE, SCORE_CELLS,
};
use crate::promptgen::{build_dataset, read_captions, AttributeFilter, HeuristicTagger, KnowledgeBase, KnowledgeLlm};
use crate::scoring::matrices_to_cells;

#[derive(Debug, Parser)]
#[command(
    name = "dimcim",
    version,
    about = "Default-mode diversity and generalization benchmarks for text-to-image models"
)]
pub struct Cli {
    /// TOML pipeline config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Use offline mock backends.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Scenario JSON for the mock backends (implies --mock).
    #[arg(long, global = true)]
    pub mock_scenario: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Reuse cached backend replies from an earlier run in the output dir.
    #[arg(long, global = true)]
    pub resume: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Endpoints {
    #[arg(long, env = "DIMCIM_GENERATOR_URL")]
    pub generator_url: Option<String>,
    #[arg(long, env = "DIMCIM_SCORER_URL")]
    pub scorer_url: Option<String>,
    #[arg(long, env = "DIMCIM_TIMEOUT_SECS")]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset from a caption corpus with an LLM.
    BuildDataset {
        /// JSON Lines of {"id", "caption"}.
        #[arg(long)]
        corpus: PathBuf,
        /// One concept per line, or a JSON array.
        #[arg(long)]
        concepts: PathBuf,
        /// Dataset output path (default: <output-dir>/dataset.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// AttributeFilter JSON; replaces the configured filter.
        #[arg(long)]
        filter: Option<PathBuf>,
        /// Knowledge file answering for the LLM in --mock mode.
        #[arg(long)]
        knowledge: Option<PathBuf>,
        #[arg(long)]
        seeds_per_concept: Option<usize>,
        #[arg(long)]
        allow_partial: bool,
        #[arg(long, env = "DIMCIM_LLM_URL")]
        llm_url: Option<String>,
        #[arg(long, env = "DIMCIM_TIMEOUT_SECS")]
        timeout_secs: Option<u64>,
    },
    /// Check a dataset file against every invariant.
    Validate { dataset: PathBuf },
    /// Generate, score and compute metrics for one model.
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model_id: Option<String>,
        #[arg(long)]
        n_images: Option<usize>,
        #[arg(long)]
        guidance_scale: Option<f64>,
        #[arg(long, value_enum)]
        parity: Option<Parity>,
        #[command(flatten)]
        endpoints: Endpoints,
    },
    /// Re-score the images of a generation manifest.
    Score {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Default: <output-dir>/generation_manifest.jsonl.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        endpoints: Endpoints,
    },
    /// Recompute a report from score cells.
    Metrics {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Default: <output-dir>/score_cells.jsonl.
        #[arg(long)]
        cells: Option<PathBuf>,
        #[arg(long)]
        model_id: Option<String>,
        /// Average summary DIM over (coarse prompt, attribute) pairs.
        #[arg(long)]
        prompt_pairs: bool,
    },
    /// Quadrant and negation findings, comparisons and plot data.
    Analyze {
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long = "figure", value_enum)]
        figures: Vec<Figure>,
        /// Leave out entries lacking a DIM or CIM counterpart.
        #[arg(long)]
        skip_unpaired: bool,
    },
    /// Training-corpus DIM against generated DIM.
    AuditTrain {
        /// JSON Lines of {"id", "uri", "labels"?}.
        #[arg(long)]
        corpus_manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Concept-presence threshold (default 0.8).
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        max_images: Option<usize>,
        #[command(flatten)]
        endpoints: Endpoints,
    },
    /// Summary table across reports of the same dataset.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Parity {
    Total,
    Flat,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.builder.rng_seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn mock_scenario(cli: &Cli, config: &PipelineConfig) -> Result<Option<MockScenario>, PipelineError> {
    match (&cli.mock_scenario, cli.mock) {
        (Some(p), _) => MockScenario::load(p).map(Some),
        (None, false) => Ok(None),
        (None, true) => match &config.mock_scenario {
            Some(p) => MockScenario::load(p).map(Some),
            None => Ok(Some(MockScenario::default())),
        },
    }
}

fn dataset_path(flag: &Option<PathBuf>, config: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    flag.clone()
        .or_else(|| config.dataset.clone())
        .ok_or_else(|| PipelineError::Config("no dataset; pass --dataset or set `dataset` in the config".into()))
}

fn timeout(flag: Option<u64>, config: &PipelineConfig) -> Duration {
    Duration::from_secs(flag.unwrap_or(config.timeout_secs))
}

fn endpoint(flag: &Option<String>, file: &Option<String>, what: &str, env: &str) -> Result<String, PipelineError> {
    let set = |v: &Option<String>| v.as_deref().map(str::trim).filter(|u| !u.is_empty()).map(String::from);
    let url = set(flag).or_else(|| set(file)).ok_or_else(|| {
        PipelineError::Config(format!(
            "no {what} endpoint; pass --{what}-url, set {env}, or use --mock"
        ))
    })?;
    if !(url.starts_with("http://") || url.starts_with("https://")) {
        return Err(PipelineError::Config(format!(
            "{what} endpoint {url:?} is not an http(s) URL"
        )));
    }
    Ok(url)
}

struct Backends {
    generator: Box<dyn ImageGenerator>,
    scorer: Box<dyn AlignmentScorer>,
    endpoints: BTreeMap<String, String>,
}

fn scorer_backend(
    mock: Option<&MockScenario>,
    e: &Endpoints,
    config: &PipelineConfig,
) -> Result<(Box<dyn AlignmentScorer>, String), PipelineError> {
    match mock {
        Some(s) => Ok((Box::new(s.scorer()), "mock".into())),
        None => {
            let url = endpoint(&e.scorer_url, &config.endpoints.scorer, "scorer", "DIMCIM_SCORER_URL")?;
            let s = HttpScorer::new(url.clone(), timeout(e.timeout_secs, config), config.max_concurrency);
            Ok((Box::new(s), url))
        }
    }
}

fn backends(
    mock: Option<&MockScenario>,
    e: &Endpoints,
    config: &PipelineConfig,
    dataset: &BenchmarkDataset,
) -> Result<Backends, PipelineError> {
    let (scorer, scorer_at) = scorer_backend(mock, e, config)?;
    let (generator, generator_at): (Box<dyn ImageGenerator>, String) = match mock {
        Some(s) => (Box::new(s.generator(dataset)), "mock".into()),
        None => {
            let url = endpoint(
                &e.generator_url,
                &config.endpoints.generator,
                "generator",
                "DIMCIM_GENERATOR_URL",
            )?;
            (
                Box::new(HttpGenerator::new(
                    url.clone(),
                    timeout(e.timeout_secs, config),
                    config.max_concurrency,
                )),
                url,
            )
        }
    };
    let endpoints = BTreeMap::from([
        (generator.name().to_string(), generator_at),
        (scorer.name().to_string(), scorer_at),
    ]);
    Ok(Backends {
        generator,
        scorer,
        endpoints,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    write_atomic(path, bytes).map_err(PipelineError::io(path))
}

fn load_report(path: &Path) -> Result<MetricReport, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
    MetricReport::from_json_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

/// Reports must have been computed on `dataset`.
fn check_hash(report: &MetricReport, dataset: &BenchmarkDataset) -> Result<(), PipelineError> {
    let expected = dataset.content_hash();
    if report.dataset_hash != expected {
        return Err(MetricsError::DatasetMismatch {
            model_id: report.model_id.clone(),
            expected,
            found: report.dataset_hash.clone(),
        }
        .into());
    }
    Ok(())
}

fn read_concepts(path: &Path) -> Result<Vec<String>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())));
    }
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let config = load_config(&cli)?;
    let mock = mock_scenario(&cli, &config)?;
    let out_dir = config.output_dir.clone();
    match &cli.command {
        Command::BuildDataset {
            corpus,
            concepts,
            out,
            filter,
            knowledge,
            seeds_per_concept,
            allow_partial,
            llm_url,
            timeout_secs,
        } => {
            let mut builder = config.builder.clone();
            if let Some(f) = filter {
                builder.filter = AttributeFilter::load(f)?;
            }
            if let Some(n) = seeds_per_concept {
                builder.seeds_per_concept = *n;
            }
            builder.allow_partial |= *allow_partial;
            builder
                .source_corpus
                .get_or_insert_with(|| corpus.file_name().unwrap_or_default().to_string_lossy().into_owned());
            let corpus_records = read_captions(corpus)?;
            let names = read_concepts(concepts)?;
            let templates = match &config.templates_dir {
                Some(d) => TemplateSet::default()
                    .with_overrides_from(d)
                    .map_err(PipelineError::io(d))?,
                None => TemplateSet::default(),
            };
            let llm = if mock.is_some() {
                let path = knowledge
                    .as_ref()
                    .ok_or_else(|| PipelineError::Config("--mock build-dataset needs --knowledge".into()))?;
                LlmClient::with_templates(KnowledgeLlm::new(KnowledgeBase::load(path)?), templates)
            } else {
                let url = endpoint(llm_url, &config.endpoints.llm, "llm", "DIMCIM_LLM_URL")?;
                LlmClient::with_templates(HttpLlm::new(url, timeout(*timeout_secs, &config)), templates)
            };
            let log_path = out_dir.join("llm_transcript.jsonl");
            let llm = llm.logging_to(&log_path).map_err(PipelineError::io(&log_path))?;
            let (dataset, report) =
                build_dataset(&corpus_records, &names, &builder, &llm, &HeuristicTagger::default())?;
            let path = out.clone().unwrap_or_else(|| out_dir.join("dataset.json"));
            save_dataset(&dataset, &path)?;
            let report_path = path.with_file_name("build_report.json");
            write(&report_path, report.to_json_string().as_bytes())?;
            let s = dataset.stats();
            println!(
                "wrote {}: {} concepts, {} attributes, {} coarse, {} dense prompts; {} warning(s)",
                path.display(),
                s.concepts,
                s.attributes,
                s.coarse_prompts,
                s.dense_prompts,
                report.warnings().count()
            );
            println!("dataset hash {}", dataset.content_hash());
        }
        Command::Validate { dataset } => {
            let ds = load_dataset(dataset)?;
            let s = ds.stats();
            println!(
                "ok: {} concepts, {} attributes, {} coarse, {} dense prompts (hash {})",
                s.concepts,
                s.attributes,
                s.coarse_prompts,
                s.dense_prompts,
                ds.content_hash()
            );
        }
        Command::Evaluate {
            dataset,
            model_id,
            n_images,
            guidance_scale,
            parity,
            endpoints,
        } => {
            let mut config = config.clone();
            if let Some(m) = model_id {
                config.model_id = m.clone();
            }
            if let Some(n) = n_images {
                config.n_images = *n;
            }
            if let Some(g) = guidance_scale {
                config.guidance_scale = *g;
            }
            if let Some(p) = parity {
                config.coarse_parity = match p {
                    Parity::Total => CoarseParity::Total,
                    Parity::Flat => CoarseParity::Flat,
                };
            }
            let ds = load_dataset(&dataset_path(dataset, &config)?)?;
            let b = backends(mock.as_ref(), endpoints, &config, &ds)?;
            let options = RunOptions {
                resume: cli.resume,
                endpoints: b.endpoints,
            };
            let e = evaluate(&ds, &config, b.generator, b.scorer, &options)?;
            println!(
                "{}: DIM {:.3}  CIM {:.3}  ({})",
                e.report.model_id,
                e.report.summary.dim,
                e.report.summary.cim,
                out_dir.join(REPORT_JSON).display()
            );
        }
        Command::Score {
            dataset,
            manifest,
            endpoints,
        } => {
            let ds = load_dataset(&dataset_path(dataset, &config)?)?;
            let images = read_manifest(&manifest.clone().unwrap_or_else(|| out_dir.join(GENERATION_MANIFEST)))?;
            let (scorer, _) = scorer_backend(mock.as_ref(), endpoints, &config)?;
            let cache_path = out_dir.join(SCORE_CACHE);
            if !cli.resume {
                let _ = std::fs::remove_file(&cache_path);
            }
            let cached = CachedScorer::open(scorer, &cache_path).map_err(|e| PipelineError::Backend {
                stage: "score",
                source: e,
            })?;
            let hints = (!config.style_hints.is_empty()).then_some(&config.style_hints);
            let (matrices, warnings) = score_images(&ds, &images, &cached, hints)?;
            let path = out_dir.join(SCORE_CELLS);
            write(
                &path,
                &to_jsonl(&matrices_to_cells(&matrices)).expect("cells serialize"),
            )?;
            println!(
                "wrote {} ({} matrices, {} warning(s))",
                path.display(),
                matrices.len(),
                warnings.len()
            );
        }
        Command::Metrics {
            dataset,
            cells,
            model_id,
            prompt_pairs,
        } => {
            let ds = load_dataset(&dataset_path(dataset, &config)?)?;
            let cells = read_cells(&cells.clone().unwrap_or_else(|| out_dir.join(SCORE_CELLS)))?;
            let meta = ReportMeta {
                model_id: model_id.clone().unwrap_or_else(|| config.model_id.clone()),
                dataset_hash: ds.content_hash(),
                config: Some(config.generation_config()),
                dim_averaging: if *prompt_pairs {
                    DimAveraging::PromptPairs
                } else {
                    config.dim_averaging
                },
            };
            let report = compute_report(&ds, &cells, meta)?;
            write(&out_dir.join(REPORT_JSON), report.to_json_string().as_bytes())?;
            write(&out_dir.join(REPORT_CSV), &report.to_csv()?)?;
            println!(
                "{}: DIM {:.3}  CIM {:.3}",
                report.model_id, report.summary.dim, report.summary.cim
            );
        }
        Command::Analyze {
            reports,
            dataset,
            figures,
            skip_unpaired,
        } => {
            let ds = load_dataset(&dataset_path(dataset, &config)?)?;
            let mut analysis = config.analysis.clone();
            analysis.skip_unpaired |= *skip_unpaired;
            let reports: Vec<MetricReport> = reports.iter().map(|p| load_report(p)).collect::<Result<_, _>>()?;
            for r in &reports {
                check_hash(r, &ds)?;
            }
            let dir = out_dir.join("analysis");
            for r in &reports {
                let stem = file_stem(&r.model_id);
                let findings = classify_quadrants(r, &analysis)?;
                write(
                    &dir.join(format!("{stem}.quadrants.csv")),
                    &findings_csv(&r.model_id, &findings)?,
                )?;
                let negations = negation_audit(r, &ds, &analysis);
                write(
                    &dir.join(format!("{stem}.negation.csv")),
                    &findings_csv(&r.model_id, &negations)?,
                )?;
                for f in figures {
                    for file in report_figure(r, *f).map_err(MetricsError::from)? {
                        write(&dir.join("figures").join(&file.path), &file.bytes)?;
                    }
                }
                let flagged = findings
                    .iter()
                    .filter(|f| f.category != crate::analysis::Category::Ok)
                    .count();
                println!(
                    "{}: {} entries, {} flagged, {} negations",
                    r.model_id,
                    findings.len(),
                    flagged,
                    negations.len()
                );
            }
            if reports.len() >= 2 {
                let table = compare_reports(&reports)?;
                write(&dir.join("comparison.csv"), &table.to_csv()?)?;
            }
        }
        Command::AuditTrain {
            corpus_manifest,
            report,
            dataset,
            threshold,
            max_images,
            endpoints,
        } => {
            let ds = load_dataset(&dataset_path(dataset, &config)?)?;
            let report = load_report(report)?;
            check_hash(&report, &ds)?;
            let corpus: Vec<CorpusImage> = read_jsonl(corpus_manifest).map_err(|source| PipelineError::Jsonl {
                path: corpus_manifest.clone(),
                source,
            })?;
            let images: Vec<_> = corpus.iter().map(CorpusImage::to_image_ref).collect();
            let (scorer, _) = scorer_backend(mock.as_ref(), endpoints, &config)?;
            let mut analysis = config.analysis.clone();
            if let Some(t) = threshold {
                analysis.filter_threshold = *t;
            }
            if max_images.is_some() {
                analysis.max_train_images = *max_images;
            }
            let hints = (!config.style_hints.is_empty()).then_some(&config.style_hints);
            let mut results: Vec<TrainingAuditResult> = Vec::new();
            let mut concepts: Vec<&str> = Vec::new();
            for e in &report.dim_entries {
                if !concepts.contains(&e.concept.as_str()) {
                    concepts.push(&e.concept);
                }
            }
            for c in concepts {
                let kept = filter_training_images(
                    &images,
                    c,
                    scorer.as_ref(),
                    analysis.filter_threshold,
                    analysis.concept_query,
                    hints,
                )?;
                if kept.is_empty() {
                    log::warn!("{c}: no corpus image passed the concept filter");
                    continue;
                }
                let train = training_dim(&kept, c, &ds, scorer.as_ref(), hints, analysis.max_train_images)?;
                results.extend(join_audit(&train, &report));
            }
            let dir = out_dir.join("audit");
            write(&dir.join("audit.csv"), &audit_csv(&results)?)?;
            let corr = correlate(&results, analysis.outlier_percentile)?;
            write(
                &dir.join("correlation.json"),
                (serde_json::to_string_pretty(&corr).expect("serializes") + "\n").as_bytes(),
            )?;
            let spec = audit_scatter_spec("audit.csv", &results);
            write(&dir.join(&spec.path), &spec.bytes)?;
            println!(
                "pearson r {:.4} over {} pairs, {} outlier(s)",
                corr.pearson_r,
                corr.n_pairs,
                corr.outliers.len()
            );
        }
        Command::Compare { reports } => {
            let reports: Vec<MetricReport> = reports.iter().map(|p| load_report(p)).collect::<Result<_, _>>()?;
            let table = compare_reports(&reports)?;
            let csv = table.to_csv()?;
            write(&out_dir.join("comparison.csv"), &csv)?;
            println!("{:<24} {:>7} {:>7} {:>9} {:>9}", "model", "DIM", "CIM", "dDIM", "dCIM");
            for r in &table.rows {
                println!(
                    "{:<24} {:>7.3} {:>7.3} {:>+9.3} {:>+9.3}",
                    r.model_id, r.dim, r.cim, r.delta_dim, r.delta_cim
                );
            }
        }
    }
    Ok(())
}
