//! Acceptance suite. Runs every primary criterion and prints one PASS/FAIL
//! line each; exits non-zero if any fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use dimcim::adapters::mock::{Curve, DefaultMode, MockScorer};
use dimcim::adapters::{
    AdapterError, AlignmentScorer, GenerationBatch, GenerationRequest, ImageGenerator, ImageRef, LlmClient,
};
use dimcim::analysis::{
    correlate, filter_training_images, join_audit, training_dim, ConceptQuery, TrainingAuditResult,
};
use dimcim::catalog::{
    load_dataset, save_dataset, AttributeType, BenchmarkDataset, CatalogError, CoarsePrompt, Concept, DensePrompt, Rule,
};
use dimcim::metrics::{
    compare_reports, pool_by_concept_type, summarize, CimEntry, DimEntry, MetricReport, PromptScore, ReportMeta,
};
use dimcim::pipeline::{
    evaluate, read_cells, read_manifest, MockScenario, PipelineConfig, RunOptions, GENERATION_MANIFEST, REPORT_JSON,
    SCORE_CACHE, SCORE_CELLS,
};
use dimcim::promptgen::{build_dataset, read_captions, BuilderConfig, HeuristicTagger, KnowledgeBase, KnowledgeLlm};
use dimcim::scoring::{attribute_concept_score, matrices_from_cells, score_all, ScoreKind, ScoreMatrix};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Independent oracle: the attribute-concept score as a plain double loop.

fn naive_score(rows: &[Vec<f64>], target: usize) -> f64 {
    let n = rows.len() as f64;
    let k = rows[0].len() as f64;
    let mut own = 0.0;
    let mut others = 0.0;
    for row in rows {
        for (j, v) in row.iter().enumerate() {
            if j == target {
                own += v;
            } else {
                others += v;
            }
        }
    }
    own / n - others / (n * (k - 1.0))
}

fn matrix(rows: &[Vec<f64>]) -> ScoreMatrix {
    let k = rows[0].len();
    let attributes = (0..k).map(|j| format!("a{j}")).collect();
    let rows = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("i{i}"), r.clone()))
        .collect();
    ScoreMatrix::from_rows("u", "c", "t", ScoreKind::Coarse, attributes, rows).unwrap()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..k).map(|_| rng.gen::<f64>()).collect()).collect()
}

fn random_suite() -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    (0..1000)
        .map(|_| {
            let n = rng.gen_range(1..=50);
            let k = rng.gen_range(2..=12);
            random_rows(&mut rng, n, k)
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for rows in random_suite() {
        let m = matrix(&rows);
        for t in 0..rows[0].len() {
            let s = attribute_concept_score(&m, &format!("a{t}")).map_err(err)?.value;
            worst = worst.max((s - naive_score(&rows, t)).abs());
        }
    }
    let elapsed = started.elapsed();
    ensure!(worst <= 1e-12, "max deviation {worst:e} > 1e-12");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("max |diff| {worst:.1e} over 1000 matrices in {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------

fn zero_sum_of(m: &ScoreMatrix) -> Result<f64, String> {
    Ok(score_all(m).map_err(err)?.iter().map(|s| s.value).sum::<f64>().abs())
}

fn pooled_from_run(dir: &Path, ds: &BenchmarkDataset) -> Result<Vec<ScoreMatrix>, String> {
    let cells = read_cells(&dir.join(SCORE_CELLS)).map_err(err)?;
    let matrices = matrices_from_cells(&cells, |u| {
        if ds.coarse_prompt(u).is_some() {
            ScoreKind::Coarse
        } else {
            ScoreKind::Dense
        }
    })
    .map_err(err)?;
    let coarse: Vec<ScoreMatrix> = matrices.into_iter().filter(|m| m.kind == ScoreKind::Coarse).collect();
    pool_by_concept_type(&coarse).map_err(err)
}

fn zero_sum() -> Outcome {
    let mut worst: f64 = 0.0;
    for rows in random_suite() {
        worst = worst.max(zero_sum_of(&matrix(&rows))?);
    }
    let mut pooled = 0;
    for scenario in ["skewed.json", "round_robin.json", "mixed.json"] {
        let ds = fixture_dataset()?;
        let dir = tempfile::tempdir().map_err(err)?;
        let s = MockScenario::load(&fixtures().join("scenarios").join(scenario)).map_err(err)?;
        let config = run_config(dir.path(), 6, 7.5);
        evaluate(&ds, &config, s.generator(&ds), s.scorer(), &RunOptions::default()).map_err(err)?;
        for m in pooled_from_run(dir.path(), &ds)? {
            worst = worst.max(zero_sum_of(&m)?);
            pooled += 1;
        }
    }
    ensure!(worst <= 1e-9, "max |sum S| {worst:e}");
    Ok(format!(
        "max |sum S| {worst:.1e} over 1000 random and {pooled} pooled DIM matrices"
    ))
}

// ---------------------------------------------------------------------------

fn bounds_and_invariances() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut shift_dev, mut scale_dev): (f64, f64) = (0.0, 0.0);
    for rows in random_suite() {
        let k = rows[0].len();
        let m = matrix(&rows);
        let base: Vec<f64> = score_all(&m).map_err(err)?.iter().map(|s| s.value).collect();
        ensure!(base.iter().all(|s| (-1.0..=1.0).contains(s)), "S out of [-1, 1]");

        // Shift: squeeze into [0, 0.5] then add c <= 0.5 so values stay in [0, 1].
        let half: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * 0.5).collect()).collect();
        let c = rng.gen_range(0.0..=0.5);
        let shifted: Vec<Vec<f64>> = half.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
        let a: Vec<f64> = score_all(&matrix(&half))
            .map_err(err)?
            .iter()
            .map(|s| s.value)
            .collect();
        let b: Vec<f64> = score_all(&matrix(&shifted))
            .map_err(err)?
            .iter()
            .map(|s| s.value)
            .collect();
        for (x, y) in a.iter().zip(&b) {
            shift_dev = shift_dev.max((x - y).abs());
        }

        let lambda = rng.gen_range(0.01..=1.0);
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * lambda).collect()).collect();
        let s: Vec<f64> = score_all(&matrix(&scaled))
            .map_err(err)?
            .iter()
            .map(|s| s.value)
            .collect();
        for (x, y) in base.iter().zip(&s) {
            scale_dev = scale_dev.max((lambda * x - y).abs());
        }

        let mut perm = rows.clone();
        perm.shuffle(&mut rng);
        for t in 0..k {
            let name = format!("a{t}");
            let p = attribute_concept_score(&matrix(&perm), &name).map_err(err)?.value;
            let q = attribute_concept_score(&m, &name).map_err(err)?.value;
            ensure!(p.to_bits() == q.to_bits(), "row permutation changed S: {q} -> {p}");
        }
    }
    ensure!(shift_dev <= 1e-12, "shift deviation {shift_dev:e}");
    ensure!(scale_dev <= 1e-12, "scale deviation {scale_dev:e}");
    Ok(format!(
        "shift {shift_dev:.1e}, scale {scale_dev:.1e}, permutation exact"
    ))
}

// ---------------------------------------------------------------------------

fn dim(concept: &str, attribute: &str, value: f64) -> DimEntry {
    DimEntry {
        concept: concept.into(),
        attribute_type: "t".into(),
        attribute: attribute.into(),
        value,
        n_images: 30,
    }
}

fn cim(concept: &str, attribute: &str, per_prompt: Vec<f64>) -> CimEntry {
    let value = per_prompt.iter().sum::<f64>() / per_prompt.len() as f64;
    CimEntry {
        concept: concept.into(),
        attribute_type: "t".into(),
        attribute: attribute.into(),
        value,
        n_prompts: per_prompt.len(),
        per_prompt: per_prompt
            .into_iter()
            .enumerate()
            .map(|(i, v)| PromptScore {
                prompt_id: format!("{concept}-{attribute}-{i}"),
                value: v,
            })
            .collect(),
    }
}

fn summary_formulas() -> Outcome {
    let r = summarize(
        ReportMeta::default(),
        vec![dim("c", "a", 0.4), dim("c", "b", -0.4)],
        Vec::new(),
        vec![cim("c", "a", vec![0.5])],
    )
    .map_err(err)?;
    ensure!(
        r.summary.dim == 0.6,
        "summary_dim for {{+0.4, -0.4}} is {} not 0.6",
        r.summary.dim
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..200 {
        let nd = rng.gen_range(1..40);
        let nc = rng.gen_range(1..40);
        let dims = (0..nd)
            .map(|j| dim(&format!("c{}", j % 5), &format!("a{j}"), rng.gen_range(-1.0..=1.0)))
            .collect();
        let cims = (0..nc)
            .map(|j| {
                let p = rng.gen_range(1..5);
                cim(
                    &format!("c{}", j % 5),
                    &format!("a{j}"),
                    (0..p).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
                )
            })
            .collect();
        let r = summarize(ReportMeta::default(), dims, Vec::new(), cims).map_err(err)?;
        ensure!(
            (0.0..=1.0).contains(&r.summary.dim),
            "report {i}: summary_dim {}",
            r.summary.dim
        );
        ensure!(
            (-1.0..=1.0).contains(&r.summary.cim),
            "report {i}: summary_cim {}",
            r.summary.cim
        );
    }
    Ok("summary_dim({+0.4, -0.4}) = 0.6; bounds hold on 200 random reports".into())
}

// ---------------------------------------------------------------------------

/// One concept, one type {glass, ceramic}; each coarse prompt has one dense
/// prompt per attribute.
fn two_attribute_dataset(n_coarse: usize) -> BenchmarkDataset {
    let mut coarse = Vec::new();
    let mut dense = Vec::new();
    for i in 1..=n_coarse {
        let cid = format!("vase-cp-{i:03}");
        coarse.push(CoarsePrompt {
            id: cid.clone(),
            concept: "vase".into(),
            text: format!("A vase on shelf {i}"),
            seed_caption: None,
        });
        for a in ["glass", "ceramic"] {
            dense.push(DensePrompt {
                id: format!("vase-dp-{:04}", dense.len() + 1),
                coarse_id: cid.clone(),
                concept: "vase".into(),
                attribute_type: "material".into(),
                attribute: a.into(),
                text: format!("A {a} vase on shelf {i}"),
            });
        }
    }
    BenchmarkDataset {
        metadata: BTreeMap::new(),
        concepts: vec![Concept::new(
            "vase",
            vec![AttributeType::new("material", ["glass", "ceramic"])],
        )],
        coarse_prompts: coarse,
        dense_prompts: dense,
    }
}

fn run_config(dir: &Path, n: usize, guidance: f64) -> PipelineConfig {
    PipelineConfig {
        output_dir: dir.to_path_buf(),
        n_images: n,
        guidance_scale: guidance,
        ..Default::default()
    }
}

fn mock_end_to_end() -> Outcome {
    let started = Instant::now();
    let ds = two_attribute_dataset(3);
    let dir = tempfile::tempdir().map_err(err)?;
    let skew = MockScenario {
        default_mode: DefaultMode::Fixed { attribute: None },
        ..Default::default()
    };
    let e = evaluate(
        &ds,
        &run_config(dir.path(), 30, 7.5),
        skew.generator(&ds),
        skew.scorer(),
        &RunOptions::default(),
    )
    .map_err(err)?;
    let (d, c) = (e.report.summary.dim, e.report.summary.cim);
    ensure!(
        (d - 0.2).abs() <= 1e-9 && (c - 0.8).abs() <= 1e-9,
        "skew scenario gave ({d}, {c})"
    );
    for m in pooled_from_run(dir.path(), &ds)? {
        ensure!(zero_sum_of(&m)? <= 1e-9, "pooled matrix {} not zero-sum", m.unit_id);
    }

    let dir = tempfile::tempdir().map_err(err)?;
    let rr = MockScenario::default();
    let e = evaluate(
        &ds,
        &run_config(dir.path(), 30, 7.5),
        rr.generator(&ds),
        rr.scorer(),
        &RunOptions::default(),
    )
    .map_err(err)?;
    let d_rr = e.report.summary.dim;
    ensure!((d_rr - 1.0).abs() <= 1e-9, "round-robin summary_dim {d_rr}");
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "skew ({d:.9}, {c:.9}); round-robin DIM {d_rr:.9}; {elapsed:.2?}"
    ))
}

// ---------------------------------------------------------------------------

fn fixture_dataset() -> Result<BenchmarkDataset, String> {
    let corpus = read_captions(&fixtures().join("captions.jsonl")).map_err(err)?;
    let kb = KnowledgeBase::load(&fixtures().join("knowledge.json")).map_err(err)?;
    let concepts: Vec<String> = ["bird", "table", "bed", "dog", "car"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let config = BuilderConfig {
        seeds_per_concept: 4,
        ..Default::default()
    };
    let llm = LlmClient::new(KnowledgeLlm::new(kb));
    Ok(
        build_dataset(&corpus, &concepts, &config, &llm, &HeuristicTagger::default())
            .map_err(err)?
            .0,
    )
}

fn cfg_direction() -> Outcome {
    let ds = fixture_dataset()?;
    let scenario = MockScenario {
        default_mode: DefaultMode::Skewed {
            attribute: None,
            strength: Curve::Saturating { half: 5.0 },
        },
        compliance: Curve::Saturating { half: 2.0 },
        ..Default::default()
    };
    let mut points = Vec::new();
    for g in [2.0, 5.0, 7.5] {
        let dir = tempfile::tempdir().map_err(err)?;
        let e = evaluate(
            &ds,
            &run_config(dir.path(), 30, g),
            scenario.generator(&ds),
            scenario.scorer(),
            &RunOptions::default(),
        )
        .map_err(err)?;
        points.push((g, e.report.summary.dim, e.report.summary.cim));
    }
    let line = points
        .iter()
        .map(|(g, d, c)| format!("g={g}: ({d:.3}, {c:.3})"))
        .collect::<Vec<_>>()
        .join("; ");
    for w in points.windows(2) {
        ensure!(w[1].2 > w[0].2, "CIM not strictly increasing: {line}");
        ensure!(w[1].1 <= w[0].1, "DIM not weakly decreasing: {line}");
    }
    Ok(line)
}

// ---------------------------------------------------------------------------

fn load_reports(dir: &str, files: &[&str]) -> Result<Vec<MetricReport>, String> {
    files
        .iter()
        .map(|f| {
            let text = std::fs::read_to_string(fixtures().join("reports").join(dir).join(f)).map_err(err)?;
            MetricReport::from_json_str(&text).map_err(err)
        })
        .collect()
}

fn table_ingestion() -> Outcome {
    let reports = load_reports(
        "models",
        &["ldm2_1.json", "flow_int.json", "ldm3_5l.json", "flux1_dev.json"],
    )?;
    let table = compare_reports(&reports).map_err(err)?;
    let printed = [
        ("LDM2.1", 0.815, 0.299),
        ("Flow-Int", 0.802, 0.315),
        ("LDM3.5L", 0.799, 0.374),
        ("FLUX.1-dev", 0.785, 0.326),
    ];
    for (row, (m, d, c)) in table.rows.iter().zip(printed) {
        ensure!(
            row.model_id == m && row.dim == d && row.cim == c,
            "row {row:?} differs from ({m}, {d}, {c})"
        );
    }
    ensure!(
        table.rows.windows(2).all(|w| w[1].dim < w[0].dim),
        "DIM is not decreasing in table order"
    );
    let cims: Vec<f64> = table.rows.iter().map(|r| r.cim).collect();
    let monotone = cims.windows(2).all(|w| w[1] >= w[0]) || cims.windows(2).all(|w| w[1] <= w[0]);
    ensure!(!monotone, "CIM is monotone: {cims:?}");
    let top = table.max_cim().ok_or("empty table")?;
    ensure!(
        top.model_id == "LDM3.5L" && top.cim == 0.374,
        "max CIM is {} {}",
        top.model_id,
        top.cim
    );

    let cfg = compare_reports(&load_reports(
        "cfg",
        &["flow_int_cfg2_0.json", "flow_int_cfg5_0.json", "flow_int_cfg7_5.json"],
    )?)
    .map_err(err)?;
    let dirs_ok = cfg.rows.windows(2).all(|w| w[1].dim < w[0].dim && w[1].cim > w[0].cim);
    ensure!(dirs_ok, "guidance table does not show DIM down / CIM up");
    Ok(format!(
        "4 model rows as printed; max CIM {} {:.3}; guidance rows DIM down, CIM up",
        top.model_id, top.cim
    ))
}

// ---------------------------------------------------------------------------

fn textbook_pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn audit_pairs(pairs: &[(f64, f64)]) -> Vec<TrainingAuditResult> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, (x, y))| TrainingAuditResult {
            concept: "c".into(),
            attribute_type: "t".into(),
            attribute: format!("a{i}"),
            train_dim: *x,
            gen_dim: *y,
            n_train_images: 10,
        })
        .collect()
}

struct Audit {
    results: Vec<TrainingAuditResult>,
}

fn run_audit(
    corpus: &[ImageRef],
    report: &MetricReport,
    ds: &BenchmarkDataset,
    scorer: &dyn AlignmentScorer,
) -> Result<Audit, String> {
    let mut results = Vec::new();
    for c in &ds.concepts {
        let kept = filter_training_images(corpus, &c.name, scorer, 0.8, ConceptQuery::Photo, None).map_err(err)?;
        let train = training_dim(&kept, &c.name, ds, scorer, None, None).map_err(err)?;
        results.extend(join_audit(&train, report));
    }
    Ok(Audit { results })
}

fn training_audit() -> Outcome {
    let ds = fixture_dataset()?;
    let scenario = MockScenario {
        default_mode: DefaultMode::Categorical {
            weights: vec![0.6, 0.3, 0.1],
        },
        overrides: BTreeMap::from([
            ("bird/state".to_string(), DefaultMode::RoundRobin),
            ("bed".to_string(), DefaultMode::Fixed { attribute: None }),
            (
                "table/shape".to_string(),
                DefaultMode::Categorical {
                    weights: vec![0.8, 0.2],
                },
            ),
            ("car/body style".to_string(), DefaultMode::RoundRobin),
        ]),
        ..Default::default()
    };
    let dir = tempfile::tempdir().map_err(err)?;
    let e = evaluate(
        &ds,
        &run_config(dir.path(), 10, 7.5),
        scenario.generator(&ds),
        scenario.scorer(),
        &RunOptions::default(),
    )
    .map_err(err)?;
    // The corpus is the coarse images again under new ids: same label mix.
    let corpus: Vec<ImageRef> = read_manifest(&dir.path().join(GENERATION_MANIFEST))
        .map_err(err)?
        .into_iter()
        .filter(|i| ds.coarse_prompt(&i.prompt_id).is_some())
        .enumerate()
        .map(|(n, i)| ImageRef {
            id: format!("corpus-{n}"),
            prompt_id: "corpus".into(),
            ..i
        })
        .collect();
    let scorer = scenario.scorer();
    let audit = run_audit(&corpus, &e.report, &ds, &scorer)?;
    let perfect = correlate(&audit.results, 95.0).map_err(err)?;
    ensure!(
        (perfect.pearson_r - 1.0).abs() <= 1e-12,
        "perfect agreement gave r = {}",
        perfect.pearson_r
    );
    ensure!(
        perfect.outliers.is_empty(),
        "perfect agreement flagged {:?}",
        perfect.outliers
    );

    // Inject frequent flying birds into the corpus only.
    let mut skewed = corpus.clone();
    let bird = corpus
        .iter()
        .find(|i| i.labels.as_ref().is_some_and(|l| l["_concept"] == "bird"))
        .ok_or("no bird image")?;
    for n in 0..120 {
        let mut img = bird.clone();
        img.id = format!("flying-{n}");
        img.labels.as_mut().unwrap().insert("state".into(), "flying".into());
        skewed.push(img);
    }
    let anomalous = run_audit(&skewed, &e.report, &ds, &scorer)?;
    let corr = correlate(&anomalous.results, 95.0).map_err(err)?;
    let flagged = corr
        .outliers
        .iter()
        .any(|o| o.concept == "bird" && o.attribute == "flying");
    ensure!(flagged, "flying bird not among outliers {:?}", corr.outliers);

    let pairs = [(1.0, 2.0), (2.0, 1.0), (3.0, 4.0), (4.0, 3.0)];
    let scaled: Vec<(f64, f64)> = pairs.iter().map(|(x, y)| (x / 10.0, y / 10.0)).collect();
    let r = correlate(&audit_pairs(&scaled), 95.0).map_err(err)?.pearson_r;
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let textbook = textbook_pearson(&xs, &ys);
    ensure!((textbook - 0.6).abs() <= 1e-12, "textbook oracle gives {textbook}");
    ensure!(
        (r - textbook).abs() <= 1e-12,
        "correlate gives {r}, textbook {textbook}"
    );
    Ok(format!(
        "r = {:.15} on {} pairs; anomaly flagged ({} outlier(s)); hand example r = {r:.15}",
        perfect.pearson_r,
        perfect.n_pairs,
        corr.outliers.len()
    ))
}

// ---------------------------------------------------------------------------

const WORDS: &[&str] = &[
    "amber", "basalt", "cobalt", "dusky", "ember", "fluted", "gilded", "hazel", "ivory", "jade", "khaki", "linen",
    "mossy", "navy", "ochre", "plaid", "quartz", "rusty", "sable", "teal",
];

fn random_dataset(rng: &mut ChaCha8Rng) -> BenchmarkDataset {
    let n_concepts = rng.gen_range(1..=4);
    let mut concepts = Vec::new();
    let mut coarse = Vec::new();
    let mut dense = Vec::new();
    for ci in 0..n_concepts {
        let name = if rng.gen_bool(0.3) {
            format!("thing{ci} kind")
        } else {
            format!("thing{ci}")
        };
        let mut pool: Vec<String> = WORDS.iter().map(|w| w.to_string()).collect();
        pool.push("café-colored".into());
        pool.push("without handles".into());
        pool.shuffle(rng);
        let n_types = rng.gen_range(1..=3);
        let mut types = Vec::new();
        for ti in 0..n_types {
            let k = rng.gen_range(2..=4);
            let attrs: Vec<String> = pool.drain(..k).collect();
            types.push(AttributeType::new(format!("type {ti}"), attrs));
        }
        let stem = name.replace(' ', "_");
        for pi in 1..=rng.gen_range(1..=3) {
            let cid = format!("{stem}-cp-{pi:03}");
            coarse.push(CoarsePrompt {
                id: cid.clone(),
                concept: name.clone(),
                text: format!("A {name} in scene {pi}"),
                seed_caption: rng.gen_bool(0.5).then(|| format!("A striped {name} in scene {pi}")),
            });
            for t in &types {
                for a in &t.attributes {
                    dense.push(DensePrompt {
                        id: format!("{stem}-dp-{:04}", dense.len() + 1),
                        coarse_id: cid.clone(),
                        concept: name.clone(),
                        attribute_type: t.name.clone(),
                        attribute: a.clone(),
                        text: format!("A {a} {name} in scene {pi}"),
                    });
                }
            }
        }
        concepts.push(Concept::new(name, types));
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("builder_version".into(), serde_json::json!("test"));
    metadata.insert("seed".into(), serde_json::json!(rng.gen::<u32>()));
    BenchmarkDataset {
        metadata,
        concepts,
        coarse_prompts: coarse,
        dense_prompts: dense,
    }
}

fn small_dataset() -> BenchmarkDataset {
    BenchmarkDataset {
        metadata: BTreeMap::new(),
        concepts: vec![Concept::new(
            "table",
            vec![AttributeType::new("material", ["wood", "metal"])],
        )],
        coarse_prompts: vec![CoarsePrompt {
            id: "table-cp-001".into(),
            concept: "table".into(),
            text: "A table in a living room".into(),
            seed_caption: None,
        }],
        dense_prompts: vec![
            DensePrompt {
                id: "table-dp-0001".into(),
                coarse_id: "table-cp-001".into(),
                concept: "table".into(),
                attribute_type: "material".into(),
                attribute: "wood".into(),
                text: "A wood table in a living room".into(),
            },
            DensePrompt {
                id: "table-dp-0002".into(),
                coarse_id: "table-cp-001".into(),
                concept: "table".into(),
                attribute_type: "material".into(),
                attribute: "metal".into(),
                text: "A metal table in a living room".into(),
            },
        ],
    }
}

type Mutation = fn(&mut BenchmarkDataset);

fn violations() -> Vec<(&'static str, Mutation, &'static str, Rule)> {
    vec![
        (
            "uppercase concept",
            |d| d.concepts[0].name = "Table".into(),
            "concepts[0].name",
            Rule::ConceptNameFormat,
        ),
        (
            "duplicate concept",
            |d| d.concepts.push(d.concepts[0].clone()),
            "concepts[1].name",
            Rule::ConceptNameUnique,
        ),
        (
            "concept without types",
            |d| d.concepts[0].attribute_types.clear(),
            "concepts[0].attribute_types",
            Rule::ConceptHasTypes,
        ),
        (
            "duplicate type",
            |d| {
                let t = d.concepts[0].attribute_types[0].clone();
                d.concepts[0].attribute_types.push(t)
            },
            "concepts[0].attribute_types[1].name",
            Rule::TypeNameUnique,
        ),
        (
            "single-attribute type",
            |d| d.concepts[0].attribute_types[0].attributes.truncate(1),
            "concepts[0].attribute_types[0].attributes",
            Rule::TypeMinAttributes,
        ),
        (
            "duplicate attribute",
            |d| d.concepts[0].attribute_types[0].attributes.push("wood".into()),
            "concepts[0].attribute_types[0].attributes[2]",
            Rule::AttributeUnique,
        ),
        (
            "reused prompt id",
            |d| d.dense_prompts[0].id = "table-cp-001".into(),
            "dense_prompts[0].id",
            Rule::PromptIdUnique,
        ),
        (
            "coarse without concept",
            |d| d.coarse_prompts[0].text = "A desk in a living room".into(),
            "coarse_prompts[0].text",
            Rule::CoarseContainsConcept,
        ),
        (
            "coarse leaks attribute",
            |d| d.coarse_prompts[0].text = "A wood table in a living room".into(),
            "coarse_prompts[0].text",
            Rule::CoarseAttributeAbsent,
        ),
        (
            "dangling coarse link",
            |d| d.dense_prompts[1].coarse_id = "table-cp-404".into(),
            "dense_prompts[1].coarse_id",
            Rule::CoarseLinkResolves,
        ),
        (
            "unknown attribute",
            |d| d.dense_prompts[0].attribute = "chrome".into(),
            "dense_prompts[0].attribute",
            Rule::AttributeResolves,
        ),
        (
            "dense without attribute",
            |d| d.dense_prompts[1].text = "A shiny table in a living room".into(),
            "dense_prompts[1].text",
            Rule::DenseContainsAttribute,
        ),
    ]
}

fn reference_counts() -> Result<String, String> {
    let path = std::env::var_os("DIMCIM_REFERENCE_DATASET")
        .map(PathBuf::from)
        .unwrap_or_else(|| fixtures().join("reference").join("dataset.json"));
    if !path.exists() {
        return Ok("reference counts skipped (no reference dataset present)".into());
    }
    let s = load_dataset(&path).map_err(err)?.stats();
    let got = (s.concepts, s.attributes, s.coarse_prompts, s.dense_prompts);
    ensure!(got == (30, 494, 930, 14641), "reference counts {got:?}");
    Ok("reference counts (30, 494, 930, 14641)".into())
}

fn dataset_layer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let dir = tempfile::tempdir().map_err(err)?;
    for i in 0..100 {
        let d = random_dataset(&mut rng);
        d.validate().map_err(|e| format!("random dataset {i} invalid: {e}"))?;
        let text = d.to_json_string();
        let back = BenchmarkDataset::from_json_str(&text).map_err(err)?;
        ensure!(back == d, "dataset {i} changed on round trip");
        ensure!(back.to_json_string() == text, "dataset {i} bytes changed on round trip");
        let p = dir.path().join(format!("d{i}.json"));
        save_dataset(&d, &p).map_err(err)?;
        ensure!(
            load_dataset(&p).map_err(err)? == d,
            "dataset {i} changed through a file"
        );
    }
    let mut checked = 0;
    for (what, mutate, locator, rule) in violations() {
        let mut d = small_dataset();
        mutate(&mut d);
        match BenchmarkDataset::from_json_str(&d.to_json_string()) {
            Err(CatalogError::Validation(e)) => {
                ensure!(
                    e.locator == locator && e.rule == rule,
                    "{what}: got {} at {}, expected {rule} at {locator}",
                    e.rule,
                    e.locator
                );
                checked += 1;
            }
            other => return Err(format!("{what}: expected a validation error, got {other:?}")),
        }
    }
    let reference = reference_counts()?;
    Ok(format!("100 round trips; {checked} violations located; {reference}"))
}

// ---------------------------------------------------------------------------

/// Shared call budget; once spent, every backend reports itself unavailable.
struct Budget {
    left: AtomicUsize,
}

impl Budget {
    fn take(&self) -> Result<(), AdapterError> {
        self.left
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .map(|_| ())
            .map_err(|_| AdapterError::BackendUnavailable("interrupted".into()))
    }
}

struct Flaky<T> {
    inner: T,
    budget: Arc<Budget>,
}

impl<G: ImageGenerator> ImageGenerator for Flaky<G> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn max_concurrency(&self) -> usize {
        self.inner.max_concurrency()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationBatch, AdapterError> {
        self.budget.take()?;
        self.inner.generate(request)
    }
}

struct FlakyScorer {
    inner: MockScorer,
    budget: Arc<Budget>,
}

impl AlignmentScorer for FlakyScorer {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn max_concurrency(&self) -> usize {
        4
    }

    fn score(&self, image: &ImageRef, text: &str) -> Result<f64, AdapterError> {
        self.budget.take()?;
        self.inner.score(image, text)
    }
}

fn chop_tail(path: &Path, bytes: u64) -> Result<(), String> {
    if let Ok(meta) = std::fs::metadata(path) {
        if meta.len() > bytes {
            let f = std::fs::OpenOptions::new().write(true).open(path).map_err(err)?;
            f.set_len(meta.len() - bytes).map_err(err)?;
        }
    }
    Ok(())
}

fn resume() -> Outcome {
    let ds = fixture_dataset()?;
    let scenario = MockScenario::load(&fixtures().join("scenarios").join("mixed.json")).map_err(err)?;
    let clean = tempfile::tempdir().map_err(err)?;
    let config = run_config(clean.path(), 4, 7.5);
    let full = evaluate(
        &ds,
        &config,
        scenario.generator(&ds),
        scenario.scorer(),
        &RunOptions::default(),
    )
    .map_err(err)?;
    let total: usize = full.manifest.stages.iter().map(|s| s.backend_calls).sum();
    let expected = std::fs::read(clean.path().join(REPORT_JSON)).map_err(err)?;

    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let mut points = Vec::new();
    for round in 0..5 {
        let point = rng.gen_range(1..total);
        points.push(point);
        let dir = tempfile::tempdir().map_err(err)?;
        let config = run_config(dir.path(), 4, 7.5);
        let budget = Arc::new(Budget {
            left: AtomicUsize::new(point),
        });
        let interrupted = evaluate(
            &ds,
            &config,
            Flaky {
                inner: scenario.generator(&ds),
                budget: budget.clone(),
            },
            FlakyScorer {
                inner: scenario.scorer(),
                budget,
            },
            &RunOptions::default(),
        );
        ensure!(
            interrupted.is_err(),
            "interruption at call {point} did not stop the run"
        );
        if round % 2 == 1 {
            // A kill can leave a half-written cache line behind.
            chop_tail(&dir.path().join(SCORE_CACHE), 7)?;
        }
        let resumed = evaluate(
            &ds,
            &config,
            scenario.generator(&ds),
            scenario.scorer(),
            &RunOptions {
                resume: true,
                ..Default::default()
            },
        )
        .map_err(err)?;
        let calls: usize = resumed.manifest.stages.iter().map(|s| s.backend_calls).sum();
        ensure!(calls < total, "resume at {point} re-ran all {total} backend calls");
        let got = std::fs::read(dir.path().join(REPORT_JSON)).map_err(err)?;
        ensure!(
            got == expected,
            "report after resume at call {point} (round {round}) differs"
        );
    }
    Ok(format!(
        "identical reports after interruptions at calls {points:?} of {total}"
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("zero-sum identity", zero_sum),
        ("bounds and invariances", bounds_and_invariances),
        ("summary formulas", summary_formulas),
        ("mock end-to-end", mock_end_to_end),
        ("guidance direction", cfg_direction),
        ("table ingestion", table_ingestion),
        ("training audit", training_audit),
        ("dataset layer", dataset_layer),
        ("determinism and resume", resume),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
