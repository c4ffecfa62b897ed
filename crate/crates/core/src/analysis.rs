//! Failure-mode mining over DIM/CIM pairs and the training-corpus audit.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::adapters::{bounded_map, score_alignment, AdapterError, AlignmentQuery, AlignmentScorer, ImageRef};
use crate::catalog::BenchmarkDataset;
use crate::metrics::{dim_attribute_scores, DimEntry, MetricReport};
use crate::scoring::{build_score_matrix, render_concept_query, MatrixSpec, ScoreKind, ScoringError, StyleHints};
use crate::text::tokenize;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("{concept}/{attribute_type}/{attribute} has a {present} entry but no {missing} entry")]
    MissingCounterpart {
        concept: String,
        attribute_type: String,
        attribute: String,
        present: &'static str,
        missing: &'static str,
    },
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("concept {0:?} is not in the dataset")]
    UnknownConcept(String),
    #[error("correlation needs at least 2 finite pairs, got {0}")]
    TooFewPairs(usize),
    #[error("all {axis} values are equal; correlation is undefined")]
    DegenerateVariance { axis: &'static str },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Backend(#[from] AdapterError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// How the concept-presence filter phrases its query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptQuery {
    /// "a photo of a bird"
    #[default]
    Photo,
    /// "bird"
    Bare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub tau_fail: f64,
    pub tau_can: f64,
    pub tau_bias: f64,
    /// Attribute prefixes that mark a negation, matched word by word.
    pub negation_markers: Vec<String>,
    /// Residual percentile above which a pair counts as an outlier.
    pub outlier_percentile: f64,
    pub filter_threshold: f64,
    pub concept_query: ConceptQuery,
    /// Cap on corpus images used per concept; `None` pools all of them.
    pub max_train_images: Option<usize>,
    /// Skip DIM entries lacking a CIM counterpart (and vice versa) instead of failing.
    pub skip_unpaired: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            tau_fail: 0.0,
            tau_can: 0.3,
            tau_bias: 0.3,
            negation_markers: vec!["without".into(), "no ".into()],
            outlier_percentile: 95.0,
            filter_threshold: 0.8,
            concept_query: ConceptQuery::Photo,
            max_train_images: None,
            skip_unpaired: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    GeneralizationFailure,
    DefaultBiasOver,
    DefaultBiasUnder,
    CanButDoesnt,
    CantButDoes,
    Ok,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::GeneralizationFailure => "GENERALIZATION_FAILURE",
            Category::DefaultBiasOver => "DEFAULT_BIAS_OVER",
            Category::DefaultBiasUnder => "DEFAULT_BIAS_UNDER",
            Category::CanButDoesnt => "CAN_BUT_DOESNT",
            Category::CantButDoes => "CANT_BUT_DOES",
            Category::Ok => "OK",
        }
    }
}

/// Category of one (dim, cim) pair. The checks run in precedence order.
pub fn classify(dim: f64, cim: f64, config: &AnalysisConfig) -> Category {
    if cim < config.tau_fail && dim >= config.tau_bias {
        Category::CantButDoes
    } else if cim >= config.tau_can && dim <= -config.tau_bias {
        Category::CanButDoesnt
    } else if cim < config.tau_fail {
        Category::GeneralizationFailure
    } else if dim >= config.tau_bias {
        Category::DefaultBiasOver
    } else if dim <= -config.tau_bias {
        Category::DefaultBiasUnder
    } else {
        Category::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantFinding {
    pub concept: String,
    pub attribute_type: String,
    pub attribute: String,
    pub dim: f64,
    pub cim: f64,
    pub category: Category,
}

type Key<'a> = (&'a str, &'a str, &'a str);

/// Pairs every DIM entry with its CIM entry and classifies the pair, in DIM
/// entry order.
pub fn classify_quadrants(
    report: &MetricReport,
    config: &AnalysisConfig,
) -> Result<Vec<QuadrantFinding>, AnalysisError> {
    let cims: HashMap<Key, f64> = report
        .cim_entries
        .iter()
        .map(|e| {
            (
                (e.concept.as_str(), e.attribute_type.as_str(), e.attribute.as_str()),
                e.value,
            )
        })
        .collect();
    let mut out = Vec::new();
    for d in &report.dim_entries {
        match cims.get(&(d.concept.as_str(), d.attribute_type.as_str(), d.attribute.as_str())) {
            Some(&cim) => out.push(QuadrantFinding {
                concept: d.concept.clone(),
                attribute_type: d.attribute_type.clone(),
                attribute: d.attribute.clone(),
                dim: d.value,
                cim,
                category: classify(d.value, cim, config),
            }),
            None if config.skip_unpaired => {}
            None => {
                return Err(AnalysisError::MissingCounterpart {
                    concept: d.concept.clone(),
                    attribute_type: d.attribute_type.clone(),
                    attribute: d.attribute.clone(),
                    present: "DIM",
                    missing: "CIM",
                })
            }
        }
    }
    if !config.skip_unpaired {
        for c in &report.cim_entries {
            if report.dim_entry(&c.concept, &c.attribute_type, &c.attribute).is_none() {
                return Err(AnalysisError::MissingCounterpart {
                    concept: c.concept.clone(),
                    attribute_type: c.attribute_type.clone(),
                    attribute: c.attribute.clone(),
                    present: "CIM",
                    missing: "DIM",
                });
            }
        }
    }
    Ok(out)
}

/// True when `attribute` starts with `marker` as whole words.
pub fn has_negation_marker(attribute: &str, marker: &str) -> bool {
    let m = tokenize(marker);
    let a = tokenize(attribute);
    !m.is_empty() && a.len() >= m.len() && a[..m.len()] == m[..]
}

/// Findings for negated attributes of the dataset, lowest CIM first.
pub fn negation_audit(
    report: &MetricReport,
    dataset: &BenchmarkDataset,
    config: &AnalysisConfig,
) -> Vec<QuadrantFinding> {
    let mut out = Vec::new();
    for concept in &dataset.concepts {
        for t in &concept.attribute_types {
            for a in &t.attributes {
                if !config.negation_markers.iter().any(|m| has_negation_marker(a, m)) {
                    continue;
                }
                let (Some(d), Some(c)) = (
                    report.dim_entry(&concept.name, &t.name, a),
                    report.cim_entry(&concept.name, &t.name, a),
                ) else {
                    continue;
                };
                out.push(QuadrantFinding {
                    concept: concept.name.clone(),
                    attribute_type: t.name.clone(),
                    attribute: a.clone(),
                    dim: d.value,
                    cim: c.value,
                    category: classify(d.value, c.value, config),
                });
            }
        }
    }
    out.sort_by(|x, y| x.cim.total_cmp(&y.cim));
    out
}

/// Findings CSV: model, concept, attribute_type, attribute, dim, cim, category.
pub fn findings_csv(model_id: &str, findings: &[QuadrantFinding]) -> Result<Vec<u8>, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model",
        "concept",
        "attribute_type",
        "attribute",
        "dim",
        "cim",
        "category",
    ])?;
    for f in findings {
        w.write_record([
            model_id,
            &f.concept,
            &f.attribute_type,
            &f.attribute,
            &f.dim.to_string(),
            &f.cim.to_string(),
            f.category.as_str(),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

/// One line of a training-corpus manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusImage {
    pub id: String,
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeMap<String, String>>,
}

impl CorpusImage {
    pub fn to_image_ref(&self) -> ImageRef {
        ImageRef {
            id: self.id.clone(),
            uri: self.uri.clone(),
            prompt_id: "corpus".into(),
            seed: 0,
            labels: self.labels.clone(),
        }
    }
}

/// Query text used to decide whether a corpus image shows the concept.
pub fn concept_query(concept: &str, style: ConceptQuery, hints: Option<&StyleHints>) -> String {
    match style {
        ConceptQuery::Photo => render_concept_query(concept, hints),
        ConceptQuery::Bare => hints
            .and_then(|h| h.get(concept))
            .cloned()
            .unwrap_or_else(|| concept.to_string()),
    }
}

/// Keeps images whose concept-presence score is at least `threshold`.
/// Images that fail to score individually are left out.
pub fn filter_training_images(
    images: &[ImageRef],
    concept: &str,
    scorer: &dyn AlignmentScorer,
    threshold: f64,
    style: ConceptQuery,
    hints: Option<&StyleHints>,
) -> Result<Vec<ImageRef>, AnalysisError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(AnalysisError::InvalidThreshold(threshold));
    }
    let text = concept_query(concept, style, hints);
    let results = bounded_map(images, scorer.max_concurrency(), |img| {
        score_alignment(
            scorer,
            &AlignmentQuery {
                image: img.clone(),
                text: text.clone(),
            },
        )
    });
    let mut kept = Vec::new();
    for (img, r) in images.iter().zip(results) {
        match r {
            Ok(s) if s >= threshold => kept.push(img.clone()),
            Ok(_) => {}
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => log::warn!("corpus image {} skipped: {e}", img.id),
        }
    }
    Ok(kept)
}

/// DIM over corpus images, one pooled matrix per attribute type of the
/// concept, through the same path as generated-image DIM.
pub fn training_dim(
    images: &[ImageRef],
    concept: &str,
    dataset: &BenchmarkDataset,
    scorer: &dyn AlignmentScorer,
    hints: Option<&StyleHints>,
    max_images: Option<usize>,
) -> Result<Vec<DimEntry>, AnalysisError> {
    let c = dataset
        .concept(concept)
        .ok_or_else(|| AnalysisError::UnknownConcept(concept.to_string()))?;
    let unit_id = format!("train:{concept}");
    if images.is_empty() {
        return Err(ScoringError::EmptyMatrix { unit_id }.into());
    }
    let images = &images[..max_images.map_or(images.len(), |m| m.min(images.len()))];
    let mut matrices = Vec::new();
    for t in &c.attribute_types {
        let spec = MatrixSpec {
            unit_id: &unit_id,
            concept,
            attribute_type: &t.name,
            attributes: &t.attributes,
            kind: ScoreKind::Coarse,
        };
        matrices.push(build_score_matrix(spec, images, scorer, hints)?);
    }
    Ok(dim_attribute_scores(&matrices)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingAuditResult {
    pub concept: String,
    pub attribute_type: String,
    pub attribute: String,
    pub train_dim: f64,
    pub gen_dim: f64,
    pub n_train_images: usize,
}

/// Joins training DIM with the generated-image DIM of the same attributes.
/// Attributes missing from the report are skipped.
pub fn join_audit(train: &[DimEntry], report: &MetricReport) -> Vec<TrainingAuditResult> {
    train
        .iter()
        .filter_map(|t| {
            let g = report.dim_entry(&t.concept, &t.attribute_type, &t.attribute)?;
            Some(TrainingAuditResult {
                concept: t.concept.clone(),
                attribute_type: t.attribute_type.clone(),
                attribute: t.attribute.clone(),
                train_dim: t.value,
                gen_dim: g.value,
                n_train_images: t.n_images,
            })
        })
        .collect()
}

pub fn audit_csv(results: &[TrainingAuditResult]) -> Result<Vec<u8>, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "concept",
        "attribute_type",
        "attribute",
        "train_dim",
        "gen_dim",
        "n_train_images",
    ])?;
    for r in results {
        w.write_record([
            r.concept.clone(),
            r.attribute_type.clone(),
            r.attribute.clone(),
            r.train_dim.to_string(),
            r.gen_dim.to_string(),
            r.n_train_images.to_string(),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outlier {
    pub concept: String,
    pub attribute_type: String,
    pub attribute: String,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub pearson_r: f64,
    pub n_pairs: usize,
    pub outliers: Vec<Outlier>,
}

/// Residuals smaller than this are never outliers, so a perfect fit flags nothing.
const RESIDUAL_FLOOR: f64 = 1e-9;

/// Pearson r over (x, y).
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(AnalysisError::TooFewPairs(n.min(ys.len())));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(AnalysisError::DegenerateVariance { axis: "x" });
    }
    if syy == 0.0 {
        return Err(AnalysisError::DegenerateVariance { axis: "y" });
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Linear-interpolated percentile, `p` in [0, 100].
fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

/// Pearson r of train against generated DIM, plus the pairs whose residual
/// from the least-squares line exceeds the configured percentile.
pub fn correlate(results: &[TrainingAuditResult], outlier_percentile: f64) -> Result<CorrelationResult, AnalysisError> {
    let finite: Vec<&TrainingAuditResult> = results
        .iter()
        .filter(|r| r.train_dim.is_finite() && r.gen_dim.is_finite())
        .collect();
    let xs: Vec<f64> = finite.iter().map(|r| r.train_dim).collect();
    let ys: Vec<f64> = finite.iter().map(|r| r.gen_dim).collect();
    let r = pearson(&xs, &ys)?;

    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    let abs: Vec<f64> = residuals.iter().map(|e| e.abs()).collect();
    let cut = percentile(&abs, outlier_percentile).max(RESIDUAL_FLOOR);
    let outliers = finite
        .iter()
        .zip(&residuals)
        .filter(|(_, e)| e.abs() > cut)
        .map(|(r, e)| Outlier {
            concept: r.concept.clone(),
            attribute_type: r.attribute_type.clone(),
            attribute: r.attribute.clone(),
            residual: *e,
        })
        .collect();
    Ok(CorrelationResult {
        pearson_r: r,
        n_pairs: xs.len(),
        outliers,
    })
}
