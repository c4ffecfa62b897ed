//! Build a benchmark dataset from the bundled caption corpus, with a
//! knowledge file standing in for the LLM.

use std::path::Path;

use dimcim::adapters::LlmClient;
use dimcim::promptgen::{
    build_dataset, read_captions, AttributeFilter, BuilderConfig, HeuristicTagger, KnowledgeBase, KnowledgeLlm,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let corpus = read_captions(&fixtures.join("captions.jsonl"))?;
    let kb = KnowledgeBase::load(&fixtures.join("knowledge.json"))?;
    let concepts: Vec<String> = ["bird", "table", "bed"].map(String::from).to_vec();

    let config = BuilderConfig {
        seeds_per_concept: 4,
        filter: AttributeFilter::load(&fixtures.join("filter.json"))?,
        ..Default::default()
    };
    let llm = LlmClient::new(KnowledgeLlm::new(kb));
    let (dataset, report) = build_dataset(&corpus, &concepts, &config, &llm, &HeuristicTagger::default())?;

    let s = dataset.stats();
    println!(
        "{} concepts, {} attributes, {} coarse, {} dense prompts",
        s.concepts, s.attributes, s.coarse_prompts, s.dense_prompts
    );
    for c in &report.concepts {
        println!(
            "  {:<6} seeds {} skipped {} leakages {}",
            c.concept, c.seeds_selected, c.skipped, c.coarse_leakages
        );
    }
    let cp = &dataset.coarse_prompts[0];
    println!("\ncoarse: {}", cp.text);
    for dp in dataset.dense_prompts.iter().filter(|d| d.coarse_id == cp.id) {
        println!("  {:<10} {}", dp.attribute_type, dp.text);
    }
    println!("\nhash {}", dataset.content_hash());
    Ok(())
}
