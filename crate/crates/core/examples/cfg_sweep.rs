//! Guidance-scale sweep with a mock generator whose prompt compliance and
//! default-mode skew both grow with guidance.

use dimcim::adapters::mock::{Curve, DefaultMode};
use dimcim::catalog::{AttributeType, BenchmarkDataset, CoarsePrompt, Concept, DensePrompt};
use dimcim::pipeline::{evaluate, MockScenario, PipelineConfig, RunOptions};

fn dataset() -> BenchmarkDataset {
    let colors = ["red", "blue", "green", "yellow"];
    let mut coarse = Vec::new();
    let mut dense = Vec::new();
    for (i, scene) in ["on a street", "in a garage", "near a beach"].iter().enumerate() {
        let cid = format!("car-cp-{:03}", i + 1);
        coarse.push(CoarsePrompt {
            id: cid.clone(),
            concept: "car".into(),
            text: format!("A car {scene}"),
            seed_caption: None,
        });
        for c in colors {
            dense.push(DensePrompt {
                id: format!("car-dp-{:04}", dense.len() + 1),
                coarse_id: cid.clone(),
                concept: "car".into(),
                attribute_type: "color".into(),
                attribute: c.into(),
                text: format!("A {c} car {scene}"),
            });
        }
    }
    BenchmarkDataset {
        metadata: Default::default(),
        concepts: vec![Concept::new("car", vec![AttributeType::new("color", colors)])],
        coarse_prompts: coarse,
        dense_prompts: dense,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = dataset();
    let scenario = MockScenario {
        default_mode: DefaultMode::Skewed {
            attribute: None,
            strength: Curve::Saturating { half: 5.0 },
        },
        compliance: Curve::Saturating { half: 2.0 },
        ..Default::default()
    };
    println!("{:>8} {:>7} {:>7}", "guidance", "DIM", "CIM");
    for g in [1.0, 2.0, 5.0, 7.5, 12.0] {
        let dir = tempfile::tempdir()?;
        let config = PipelineConfig {
            output_dir: dir.path().to_path_buf(),
            n_images: 30,
            guidance_scale: g,
            ..Default::default()
        };
        let r = evaluate(
            &ds,
            &config,
            scenario.generator(&ds),
            scenario.scorer(),
            &RunOptions::default(),
        )?
        .report;
        println!("{g:>8.1} {:>7.3} {:>7.3}", r.summary.dim, r.summary.cim);
    }
    Ok(())
}
