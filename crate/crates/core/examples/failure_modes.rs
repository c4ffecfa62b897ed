//! Quadrant classification and the negation audit on a mock run where beds
//! are always drawn with pillows.

use std::collections::BTreeMap;
use std::path::Path;

use dimcim::adapters::mock::DefaultMode;
use dimcim::adapters::LlmClient;
use dimcim::analysis::{classify_quadrants, negation_audit, AnalysisConfig, Category};
use dimcim::pipeline::{evaluate, MockScenario, PipelineConfig, RunOptions};
use dimcim::promptgen::{build_dataset, read_captions, BuilderConfig, HeuristicTagger, KnowledgeBase, KnowledgeLlm};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let corpus = read_captions(&fixtures.join("captions.jsonl"))?;
    let llm = LlmClient::new(KnowledgeLlm::new(KnowledgeBase::load(
        &fixtures.join("knowledge.json"),
    )?));
    let concepts: Vec<String> = ["bed", "dog"].map(String::from).to_vec();
    let builder = BuilderConfig {
        seeds_per_concept: 4,
        ..Default::default()
    };
    let (dataset, _) = build_dataset(&corpus, &concepts, &builder, &llm, &HeuristicTagger::default())?;

    let scenario = MockScenario {
        overrides: BTreeMap::from([
            (
                "bed/bedding".to_string(),
                DefaultMode::Fixed {
                    attribute: Some("with pillows".into()),
                },
            ),
            (
                "dog".to_string(),
                DefaultMode::Categorical {
                    weights: vec![0.7, 0.2, 0.1],
                },
            ),
        ]),
        failing_seeds: Vec::new(),
        ..Default::default()
    };
    let dir = tempfile::tempdir()?;
    let config = PipelineConfig {
        output_dir: dir.path().to_path_buf(),
        n_images: 12,
        ..Default::default()
    };
    let report = evaluate(
        &dataset,
        &config,
        scenario.generator(&dataset),
        scenario.scorer(),
        &RunOptions::default(),
    )?
    .report;

    let analysis = AnalysisConfig::default();
    println!("flagged attributes:");
    for f in classify_quadrants(&report, &analysis)? {
        if f.category != Category::Ok {
            println!(
                "  {:<4} {:<16} DIM {:+.2} CIM {:+.2}  {}",
                f.concept,
                f.attribute,
                f.dim,
                f.cim,
                f.category.as_str()
            );
        }
    }
    println!("negated attributes:");
    for f in negation_audit(&report, &dataset, &analysis) {
        println!(
            "  {:<4} {:<16} DIM {:+.2} CIM {:+.2}  {}",
            f.concept,
            f.attribute,
            f.dim,
            f.cim,
            f.category.as_str()
        );
    }
    Ok(())
}
