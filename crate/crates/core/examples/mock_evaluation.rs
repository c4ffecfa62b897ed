//! End-to-end evaluation with the offline mock backends.
//!
//! Usage: cargo run --example mock_evaluation [output-dir]

use std::path::{Path, PathBuf};

use dimcim::adapters::LlmClient;
use dimcim::pipeline::{evaluate, MockScenario, PipelineConfig, RunOptions};
use dimcim::promptgen::{build_dataset, read_captions, BuilderConfig, HeuristicTagger, KnowledgeBase, KnowledgeLlm};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let corpus = read_captions(&fixtures.join("captions.jsonl"))?;
    let llm = LlmClient::new(KnowledgeLlm::new(KnowledgeBase::load(
        &fixtures.join("knowledge.json"),
    )?));
    let concepts: Vec<String> = std::fs::read_to_string(fixtures.join("concepts.txt"))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    let builder = BuilderConfig {
        seeds_per_concept: 4,
        ..Default::default()
    };
    let (dataset, _) = build_dataset(&corpus, &concepts, &builder, &llm, &HeuristicTagger::default())?;

    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dimcim-mock-evaluation"));
    let config = PipelineConfig {
        output_dir: out.clone(),
        model_id: "mock-mixed".into(),
        n_images: 10,
        ..Default::default()
    };
    let scenario = MockScenario::load(&fixtures.join("scenarios/mixed.json"))?;
    let run = evaluate(
        &dataset,
        &config,
        scenario.generator(&dataset),
        scenario.scorer(),
        &RunOptions::default(),
    )?;

    let r = &run.report;
    println!("{}: DIM {:.3}  CIM {:.3}", r.model_id, r.summary.dim, r.summary.cim);
    let mut dims = r.dim_entries.clone();
    dims.sort_by(|a, b| b.value.total_cmp(&a.value));
    println!("most over-represented by default:");
    for e in dims.iter().take(3) {
        println!(
            "  {}/{} {:<16} {:+.3}",
            e.concept, e.attribute_type, e.attribute, e.value
        );
    }
    for st in &run.manifest.stages {
        println!("stage {:<9} {} backend calls", st.name, st.backend_calls);
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
