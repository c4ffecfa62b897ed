//! Training-corpus DIM against generated DIM. The corpus here is the
//! generated coarse images plus extra flying birds, so bird/flying should
//! come out as the outlier.

use std::path::Path;

use dimcim::adapters::{ImageRef, LlmClient};
use dimcim::analysis::{correlate, filter_training_images, join_audit, training_dim, ConceptQuery};
use dimcim::pipeline::{evaluate, read_manifest, MockScenario, PipelineConfig, RunOptions, GENERATION_MANIFEST};
use dimcim::promptgen::{build_dataset, read_captions, BuilderConfig, HeuristicTagger, KnowledgeBase, KnowledgeLlm};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let corpus = read_captions(&fixtures.join("captions.jsonl"))?;
    let llm = LlmClient::new(KnowledgeLlm::new(KnowledgeBase::load(
        &fixtures.join("knowledge.json"),
    )?));
    let concepts: Vec<String> = ["bird", "car"].map(String::from).to_vec();
    let builder = BuilderConfig {
        seeds_per_concept: 4,
        ..Default::default()
    };
    let (ds, _) = build_dataset(&corpus, &concepts, &builder, &llm, &HeuristicTagger::default())?;

    let scenario = MockScenario::load(&fixtures.join("scenarios/mixed.json"))?;
    let dir = tempfile::tempdir()?;
    let config = PipelineConfig {
        output_dir: dir.path().to_path_buf(),
        n_images: 12,
        ..Default::default()
    };
    let report = evaluate(
        &ds,
        &config,
        scenario.generator(&ds),
        scenario.scorer(),
        &RunOptions::default(),
    )?
    .report;

    let mut images: Vec<ImageRef> = read_manifest(&dir.path().join(GENERATION_MANIFEST))?
        .into_iter()
        .filter(|i| ds.coarse_prompt(&i.prompt_id).is_some())
        .collect();
    let bird = images
        .iter()
        .find(|i| i.labels.as_ref().is_some_and(|l| l["_concept"] == "bird"))
        .cloned()
        .ok_or("no bird")?;
    for n in 0..60 {
        let mut img = bird.clone();
        img.id = format!("extra-flying-{n}");
        if let Some(l) = img.labels.as_mut() {
            l.insert("state".into(), "flying".into());
        }
        images.push(img);
    }

    let scorer = scenario.scorer();
    let mut results = Vec::new();
    for c in &ds.concepts {
        let kept = filter_training_images(&images, &c.name, &scorer, 0.8, ConceptQuery::Photo, None)?;
        let train = training_dim(&kept, &c.name, &ds, &scorer, None, None)?;
        results.extend(join_audit(&train, &report));
    }
    let corr = correlate(&results, 95.0)?;
    println!("pearson r {:.3} over {} attributes", corr.pearson_r, corr.n_pairs);
    for o in &corr.outliers {
        println!(
            "  outlier {}/{} {:<10} residual {:+.3}",
            o.concept, o.attribute_type, o.attribute, o.residual
        );
    }
    Ok(())
}
