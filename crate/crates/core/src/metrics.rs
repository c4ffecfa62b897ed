//! Attribute-level and summary Does-It / Can-It metrics, report files and
//! cross-report comparison.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::adapters::GenerationConfig;
use crate::catalog::BenchmarkDataset;
use crate::scoring::{
    attribute_concept_score, pairwise_sum, score_all, AttributeConceptScore, ScoreKind, ScoreMatrix, ScoringError,
};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no {0} entries to summarize")]
    EmptyInput(&'static str),
    #[error("score matrix {unit_id} does not belong to any dense prompt")]
    OrphanMatrix { unit_id: String },
    #[error("score matrix {unit_id} covers type {found:?} but its prompt targets {expected:?}")]
    TypeMismatch {
        unit_id: String,
        expected: String,
        found: String,
    },
    #[error("report {model_id} was computed on dataset {found}, expected {expected}")]
    DatasetMismatch {
        model_id: String,
        expected: String,
        found: String,
    },
    #[error("comparison needs at least 2 reports, got {0}")]
    TooFewReports(usize),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Does-It value of one attribute: S on the pooled coarse images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimEntry {
    pub concept: String,
    pub attribute_type: String,
    pub attribute: String,
    pub value: f64,
    pub n_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptScore {
    pub prompt_id: String,
    pub value: f64,
}

/// Can-It value of one attribute: mean S over its dense prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CimEntry {
    pub concept: String,
    pub attribute_type: String,
    pub attribute: String,
    pub value: f64,
    pub n_prompts: usize,
    pub per_prompt: Vec<PromptScore>,
}

/// How summary DIM weights its inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimAveraging {
    /// Each (concept, attribute) entry once.
    #[default]
    Entries,
    /// Each (coarse prompt, attribute) pair once, from the per-prompt breakdown.
    PromptPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dim: f64,
    pub cim: f64,
}

/// Group-restricted summaries; `None` when the group has no entries of that kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollup {
    pub dim: Option<f64>,
    pub cim: Option<f64>,
    pub n_dim_entries: usize,
    pub n_cim_prompts: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rollups {
    pub per_concept: BTreeMap<String, Rollup>,
    pub per_attribute_type: BTreeMap<String, Rollup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: String,
    pub dataset_hash: String,
    #[serde(default)]
    pub config: Option<GenerationConfig>,
    #[serde(default)]
    pub dim_averaging: DimAveraging,
    pub summary: Summary,
    #[serde(default)]
    pub dim_entries: Vec<DimEntry>,
    #[serde(default)]
    pub cim_entries: Vec<CimEntry>,
    /// S per coarse prompt, for diagnostics.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dim_breakdown: Vec<AttributeConceptScore>,
    #[serde(default)]
    pub rollups: Rollups,
}

/// Identifies what a report was computed from.
#[derive(Debug, Clone, Default)]
pub struct ReportMeta {
    pub model_id: String,
    pub dataset_hash: String,
    pub config: Option<GenerationConfig>,
    pub dim_averaging: DimAveraging,
}

/// Groups coarse matrices by (concept, attribute type) and stacks their rows.
/// The pooled unit id is `{concept}/{attribute_type}`.
pub fn pool_by_concept_type(matrices: &[ScoreMatrix]) -> Result<Vec<ScoreMatrix>, ScoringError> {
    let mut order: Vec<(&str, &str)> = Vec::new();
    let mut groups: HashMap<(&str, &str), Vec<&ScoreMatrix>> = HashMap::new();
    for m in matrices {
        let key = (m.concept.as_str(), m.attribute_type.as_str());
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(m);
    }
    order
        .into_iter()
        .map(|key| ScoreMatrix::pool(format!("{}/{}", key.0, key.1), groups[&key].iter().copied()))
        .collect()
}

/// One entry per attribute of each pooled coarse matrix.
pub fn dim_attribute_scores(pooled: &[ScoreMatrix]) -> Result<Vec<DimEntry>, ScoringError> {
    let mut out = Vec::new();
    for m in pooled {
        for s in score_all(m)? {
            out.push(DimEntry {
                concept: s.concept,
                attribute_type: s.attribute_type,
                attribute: s.attribute,
                value: s.value,
                n_images: s.n_images,
            });
        }
    }
    Ok(out)
}

/// S per coarse prompt and attribute, without pooling.
pub fn dim_breakdown(coarse: &[ScoreMatrix]) -> Result<Vec<AttributeConceptScore>, ScoringError> {
    let mut out = Vec::new();
    for m in coarse {
        out.extend(score_all(m)?);
    }
    Ok(out)
}

fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Per-prompt S with the prompted attribute as target, grouped by attribute.
pub fn cim_attribute_scores(dense: &[ScoreMatrix], dataset: &BenchmarkDataset) -> Result<Vec<CimEntry>, MetricsError> {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut groups: HashMap<(String, String, String), Vec<PromptScore>> = HashMap::new();
    for m in dense {
        let prompt = dataset
            .dense_prompt(&m.unit_id)
            .ok_or_else(|| MetricsError::OrphanMatrix {
                unit_id: m.unit_id.clone(),
            })?;
        if prompt.attribute_type != m.attribute_type {
            return Err(MetricsError::TypeMismatch {
                unit_id: m.unit_id.clone(),
                expected: prompt.attribute_type.clone(),
                found: m.attribute_type.clone(),
            });
        }
        let s = attribute_concept_score(m, &prompt.attribute)?;
        let key = (
            prompt.concept.clone(),
            prompt.attribute_type.clone(),
            prompt.attribute.clone(),
        );
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(PromptScore {
                prompt_id: m.unit_id.clone(),
                value: s.value,
            });
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let per_prompt = groups.remove(&key).expect("grouped");
            let values: Vec<f64> = per_prompt.iter().map(|p| p.value).collect();
            CimEntry {
                concept: key.0,
                attribute_type: key.1,
                attribute: key.2,
                value: mean(&values),
                n_prompts: per_prompt.len(),
                per_prompt,
            }
        })
        .collect())
}

fn summary_dim(values: &[f64]) -> f64 {
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    (1.0 - mean(&abs)).clamp(0.0, 1.0)
}

fn rollup<'a>(dims: impl Iterator<Item = &'a DimEntry>, cims: impl Iterator<Item = &'a CimEntry>) -> Rollup {
    let d: Vec<f64> = dims.map(|e| e.value).collect();
    let c: Vec<f64> = cims.flat_map(|e| e.per_prompt.iter().map(|p| p.value)).collect();
    Rollup {
        dim: (!d.is_empty()).then(|| summary_dim(&d)),
        cim: (!c.is_empty()).then(|| mean(&c)),
        n_dim_entries: d.len(),
        n_cim_prompts: c.len(),
    }
}

/// Summary DIM is 1 minus the mean absolute entry value; summary CIM is the
/// mean over every dense prompt.
pub fn summarize(
    meta: ReportMeta,
    dim_entries: Vec<DimEntry>,
    dim_breakdown: Vec<AttributeConceptScore>,
    cim_entries: Vec<CimEntry>,
) -> Result<MetricReport, MetricsError> {
    if dim_entries.is_empty() {
        return Err(MetricsError::EmptyInput("DIM"));
    }
    let per_prompt: Vec<f64> = cim_entries
        .iter()
        .flat_map(|e| e.per_prompt.iter().map(|p| p.value))
        .collect();
    if per_prompt.is_empty() {
        return Err(MetricsError::EmptyInput("CIM"));
    }
    let dim = match meta.dim_averaging {
        DimAveraging::Entries => summary_dim(&dim_entries.iter().map(|e| e.value).collect::<Vec<_>>()),
        DimAveraging::PromptPairs => {
            if dim_breakdown.is_empty() {
                return Err(MetricsError::EmptyInput("per-prompt DIM"));
            }
            summary_dim(&dim_breakdown.iter().map(|e| e.value).collect::<Vec<_>>())
        }
    };
    let summary = Summary {
        dim,
        cim: mean(&per_prompt).clamp(-1.0, 1.0),
    };

    let mut rollups = Rollups::default();
    let mut concepts: Vec<&str> = dim_entries.iter().map(|e| e.concept.as_str()).collect();
    concepts.extend(cim_entries.iter().map(|e| e.concept.as_str()));
    let mut types: Vec<&str> = dim_entries.iter().map(|e| e.attribute_type.as_str()).collect();
    types.extend(cim_entries.iter().map(|e| e.attribute_type.as_str()));
    for c in concepts {
        if !rollups.per_concept.contains_key(c) {
            let r = rollup(
                dim_entries.iter().filter(|e| e.concept == c),
                cim_entries.iter().filter(|e| e.concept == c),
            );
            rollups.per_concept.insert(c.to_string(), r);
        }
    }
    for t in types {
        if !rollups.per_attribute_type.contains_key(t) {
            let r = rollup(
                dim_entries.iter().filter(|e| e.attribute_type == t),
                cim_entries.iter().filter(|e| e.attribute_type == t),
            );
            rollups.per_attribute_type.insert(t.to_string(), r);
        }
    }

    Ok(MetricReport {
        model_id: meta.model_id,
        dataset_hash: meta.dataset_hash,
        config: meta.config,
        dim_averaging: meta.dim_averaging,
        summary,
        dim_entries,
        cim_entries,
        dim_breakdown,
        rollups,
    })
}

impl MetricReport {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn dim_entry(&self, concept: &str, attribute_type: &str, attribute: &str) -> Option<&DimEntry> {
        self.dim_entries
            .iter()
            .find(|e| e.concept == concept && e.attribute_type == attribute_type && e.attribute == attribute)
    }

    pub fn cim_entry(&self, concept: &str, attribute_type: &str, attribute: &str) -> Option<&CimEntry> {
        self.cim_entries
            .iter()
            .find(|e| e.concept == concept && e.attribute_type == attribute_type && e.attribute == attribute)
    }

    /// Flat CSV: model, concept, attribute_type, attribute, kind, value, n.
    pub fn to_csv(&self) -> Result<Vec<u8>, MetricsError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "concept", "attribute_type", "attribute", "kind", "value", "n"])?;
        for e in &self.dim_entries {
            w.write_record([
                self.model_id.as_str(),
                &e.concept,
                &e.attribute_type,
                &e.attribute,
                "dim",
                &e.value.to_string(),
                &e.n_images.to_string(),
            ])?;
        }
        for e in &self.cim_entries {
            w.write_record([
                self.model_id.as_str(),
                &e.concept,
                &e.attribute_type,
                &e.attribute,
                "cim",
                &e.value.to_string(),
                &e.n_prompts.to_string(),
            ])?;
        }
        Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_id: String,
    pub dim: f64,
    pub cim: f64,
    pub delta_dim: f64,
    pub delta_cim: f64,
}

/// Change of one attribute-level value relative to the baseline report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryDelta {
    pub model_id: String,
    pub concept: String,
    pub attribute_type: String,
    pub attribute: String,
    pub kind: ScoreKind,
    pub value: f64,
    pub baseline: f64,
    pub delta: f64,
}

/// Model x (DIM, CIM) table. Deltas are relative to the first report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub dataset_hash: String,
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
    pub entry_deltas: Vec<EntryDelta>,
}

impl ComparisonTable {
    pub fn row(&self, model_id: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.model_id == model_id)
    }

    pub fn max_cim(&self) -> Option<&ComparisonRow> {
        self.rows.iter().max_by(|a, b| a.cim.total_cmp(&b.cim))
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, MetricsError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "dim", "cim", "delta_dim", "delta_cim"])?;
        for r in &self.rows {
            w.write_record([
                r.model_id.clone(),
                r.dim.to_string(),
                r.cim.to_string(),
                r.delta_dim.to_string(),
                r.delta_cim.to_string(),
            ])?;
        }
        Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
    }
}

pub fn compare_reports(reports: &[MetricReport]) -> Result<ComparisonTable, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::TooFewReports(reports.len()));
    }
    let base = &reports[0];
    if let Some(r) = reports.iter().find(|r| r.dataset_hash != base.dataset_hash) {
        return Err(MetricsError::DatasetMismatch {
            model_id: r.model_id.clone(),
            expected: base.dataset_hash.clone(),
            found: r.dataset_hash.clone(),
        });
    }
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            model_id: r.model_id.clone(),
            dim: r.summary.dim,
            cim: r.summary.cim,
            delta_dim: r.summary.dim - base.summary.dim,
            delta_cim: r.summary.cim - base.summary.cim,
        })
        .collect();

    let mut entry_deltas = Vec::new();
    for r in &reports[1..] {
        for e in &r.dim_entries {
            if let Some(b) = base.dim_entry(&e.concept, &e.attribute_type, &e.attribute) {
                entry_deltas.push(delta(
                    r,
                    e.concept.clone(),
                    e.attribute_type.clone(),
                    e.attribute.clone(),
                    ScoreKind::Coarse,
                    e.value,
                    b.value,
                ));
            }
        }
        for e in &r.cim_entries {
            if let Some(b) = base.cim_entry(&e.concept, &e.attribute_type, &e.attribute) {
                entry_deltas.push(delta(
                    r,
                    e.concept.clone(),
                    e.attribute_type.clone(),
                    e.attribute.clone(),
                    ScoreKind::Dense,
                    e.value,
                    b.value,
                ));
            }
        }
    }
    Ok(ComparisonTable {
        dataset_hash: base.dataset_hash.clone(),
        baseline: base.model_id.clone(),
        rows,
        entry_deltas,
    })
}

fn delta(
    r: &MetricReport,
    concept: String,
    attribute_type: String,
    attribute: String,
    kind: ScoreKind,
    value: f64,
    baseline: f64,
) -> EntryDelta {
    EntryDelta {
        model_id: r.model_id.clone(),
        concept,
        attribute_type,
        attribute,
        kind,
        value,
        baseline,
        delta: value - baseline,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::tests::minimal;
    use proptest::prelude::*;

    fn dim(concept: &str, attribute: &str, value: f64) -> DimEntry {
        DimEntry {
            concept: concept.into(),
            attribute_type: "t".into(),
            attribute: attribute.into(),
            value,
            n_images: 1,
        }
    }

    fn cim(concept: &str, attribute: &str, values: &[f64]) -> CimEntry {
        let per_prompt: Vec<PromptScore> = values
            .iter()
            .enumerate()
            .map(|(i, v)| PromptScore {
                prompt_id: format!("{concept}-{attribute}-{i}"),
                value: *v,
            })
            .collect();
        CimEntry {
            concept: concept.into(),
            attribute_type: "t".into(),
            attribute: attribute.into(),
            value: values.iter().sum::<f64>() / values.len() as f64,
            n_prompts: values.len(),
            per_prompt,
        }
    }

    fn report(dims: Vec<DimEntry>, cims: Vec<CimEntry>) -> MetricReport {
        summarize(ReportMeta::default(), dims, Vec::new(), cims).unwrap()
    }

    fn grid_matrix(unit: &str, kind: ScoreKind, attrs: &[&str], rows: &[&[f64]]) -> ScoreMatrix {
        ScoreMatrix::from_rows(
            unit,
            "table",
            "material",
            kind,
            attrs.iter().map(|a| a.to_string()).collect(),
            rows.iter()
                .enumerate()
                .map(|(i, r)| (format!("{unit}/{i}"), r.to_vec()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn summary_dim_of_opposed_entries() {
        let r = report(
            vec![dim("c", "a", 0.4), dim("c", "b", -0.4)],
            vec![cim("c", "a", &[0.5])],
        );
        assert_eq!(r.summary.dim, 0.6);
        let r = report(
            vec![dim("c", "a", 0.0), dim("c", "b", 0.0)],
            vec![cim("c", "a", &[0.5])],
        );
        assert_eq!(r.summary.dim, 1.0);
    }

    #[test]
    fn summary_cim_is_prompt_weighted() {
        // Entry means are 0.4 and 1.0, but three prompts average to 0.6.
        let r = report(
            vec![dim("c", "a", 0.0)],
            vec![cim("c", "a", &[0.6, 0.2]), cim("c", "b", &[1.0])],
        );
        assert!((r.summary.cim - 0.6).abs() < 1e-15);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(
            summarize(ReportMeta::default(), vec![], vec![], vec![cim("c", "a", &[0.1])]),
            Err(MetricsError::EmptyInput(_))
        ));
        assert!(matches!(
            summarize(ReportMeta::default(), vec![dim("c", "a", 0.1)], vec![], vec![]),
            Err(MetricsError::EmptyInput(_))
        ));
    }

    #[test]
    fn degenerate_and_balanced_pools() {
        let always_a = grid_matrix(
            "p",
            ScoreKind::Coarse,
            &["wood", "metal"],
            &[&[0.9, 0.1], &[0.9, 0.1], &[0.9, 0.1]],
        );
        let d = dim_attribute_scores(&[always_a]).unwrap();
        assert!((d[0].value - 0.8).abs() < 1e-12 && (d[1].value + 0.8).abs() < 1e-12);
        let rr = grid_matrix("p", ScoreKind::Coarse, &["wood", "metal"], &[&[0.9, 0.1], &[0.1, 0.9]]);
        let d = dim_attribute_scores(&[rr]).unwrap();
        assert!(d.iter().all(|e| e.value.abs() < 1e-12));
        let single = grid_matrix("p", ScoreKind::Coarse, &["wood", "metal"], &[&[0.9, 0.1]]);
        assert!((dim_attribute_scores(&[single]).unwrap()[0].value - 0.8).abs() < 1e-12);
    }

    #[test]
    fn pooling_groups_by_concept_and_type() {
        let a = grid_matrix("cp1", ScoreKind::Coarse, &["wood", "metal"], &[&[0.9, 0.1]]);
        let b = grid_matrix("cp2", ScoreKind::Coarse, &["wood", "metal"], &[&[0.1, 0.9]]);
        let pooled = pool_by_concept_type(&[a, b]).unwrap();
        assert_eq!(pooled.len(), 1);
        assert_eq!(pooled[0].unit_id, "table/material");
        assert_eq!(pooled[0].n_images(), 2);
    }

    #[test]
    fn cim_uses_the_prompted_attribute() {
        let ds = minimal();
        // table-dp-0001 asks for wood, table-dp-0002 for metal.
        let compliant = grid_matrix("table-dp-0001", ScoreKind::Dense, &["wood", "metal"], &[&[0.9, 0.1]]);
        let defiant = grid_matrix("table-dp-0002", ScoreKind::Dense, &["wood", "metal"], &[&[0.9, 0.1]]);
        let entries = cim_attribute_scores(&[compliant, defiant], &ds).unwrap();
        assert!((entries[0].value - 0.8).abs() < 1e-12);
        assert!((entries[1].value + 0.8).abs() < 1e-12);

        let orphan = grid_matrix("nope", ScoreKind::Dense, &["wood", "metal"], &[&[0.9, 0.1]]);
        assert!(matches!(
            cim_attribute_scores(&[orphan], &ds),
            Err(MetricsError::OrphanMatrix { .. })
        ));
    }

    #[test]
    fn cim_entry_is_mean_of_its_prompts() {
        let e = cim("c", "a", &[0.6, 0.2]);
        assert!((e.value - 0.4).abs() < 1e-15);
    }

    #[test]
    fn prompt_pair_averaging_is_opt_in() {
        let meta = ReportMeta {
            dim_averaging: DimAveraging::PromptPairs,
            ..Default::default()
        };
        let a = grid_matrix("cp1", ScoreKind::Coarse, &["wood", "metal"], &[&[0.9, 0.1]]);
        let b = grid_matrix("cp2", ScoreKind::Coarse, &["wood", "metal"], &[&[0.1, 0.9]]);
        let breakdown = dim_breakdown(&[a.clone(), b.clone()]).unwrap();
        let pooled = dim_attribute_scores(&pool_by_concept_type(&[a, b]).unwrap()).unwrap();
        let entries = summarize(
            ReportMeta::default(),
            pooled.clone(),
            breakdown.clone(),
            vec![cim("table", "wood", &[0.5])],
        )
        .unwrap();
        let pairs = summarize(meta, pooled, breakdown, vec![cim("table", "wood", &[0.5])]).unwrap();
        assert!((entries.summary.dim - 1.0).abs() < 1e-12);
        assert!((pairs.summary.dim - 0.2).abs() < 1e-12);
    }

    #[test]
    fn comparison_deltas_and_mismatch() {
        let mut a = report(
            vec![dim("c", "a", 0.4), dim("c", "b", -0.4)],
            vec![cim("c", "a", &[0.5])],
        );
        a.model_id = "m1".into();
        a.dataset_hash = "h".into();
        let mut b = a.clone();
        b.model_id = "m2".into();
        let t = compare_reports(&[a.clone(), b.clone()]).unwrap();
        assert!(t.rows.iter().all(|r| r.delta_dim == 0.0 && r.delta_cim == 0.0));
        assert!(t.entry_deltas.iter().all(|d| d.delta == 0.0));
        assert_eq!(t.entry_deltas.len(), 3);
        b.dataset_hash = "other".into();
        assert!(matches!(
            compare_reports(&[a.clone(), b]),
            Err(MetricsError::DatasetMismatch { .. })
        ));
        assert!(matches!(compare_reports(&[a]), Err(MetricsError::TooFewReports(1))));
    }

    #[test]
    fn report_json_and_csv() {
        let mut r = report(
            vec![dim("c", "a", 0.5), dim("c", "b", -0.5)],
            vec![cim("c", "a", &[0.25])],
        );
        r.model_id = "m".into();
        let back = MetricReport::from_json_str(&r.to_json_string()).unwrap();
        assert_eq!(back, r);
        let csv = String::from_utf8(r.to_csv().unwrap()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "model,concept,attribute_type,attribute,kind,value,n");
        assert_eq!(lines[1], "m,c,t,a,dim,0.5,1");
        assert_eq!(lines[3], "m,c,t,a,cim,0.25,1");
        let v: serde_json::Value = serde_json::from_str(&r.to_json_string()).unwrap();
        for key in [
            "model_id",
            "dataset_hash",
            "config",
            "summary",
            "dim_entries",
            "cim_entries",
            "rollups",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn rollups_restrict_the_summary() {
        let r = report(
            vec![
                dim("x", "a", 0.4),
                dim("x", "b", -0.4),
                dim("y", "a", 0.0),
                dim("y", "b", 0.0),
            ],
            vec![cim("x", "a", &[0.2]), cim("y", "a", &[0.6])],
        );
        assert_eq!(r.rollups.per_concept["x"].dim, Some(0.6));
        assert_eq!(r.rollups.per_concept["y"].dim, Some(1.0));
        assert_eq!(r.rollups.per_concept["y"].cim, Some(0.6));
        assert_eq!(r.rollups.per_attribute_type["t"].n_dim_entries, 4);
    }

    proptest! {
        #[test]
        fn summaries_stay_in_range(
            dims in prop::collection::vec(-1.0f64..=1.0, 1..40),
            cims in prop::collection::vec(prop::collection::vec(-1.0f64..=1.0, 1..5), 1..20),
        ) {
            let d = dims.iter().enumerate().map(|(i, v)| dim("c", &format!("a{i}"), *v)).collect();
            let c = cims.iter().enumerate().map(|(i, v)| cim("c", &format!("a{i}"), v)).collect();
            let r = report(d, c);
            prop_assert!((0.0..=1.0).contains(&r.summary.dim));
            prop_assert!((-1.0..=1.0).contains(&r.summary.cim));
        }

        #[test]
        fn summary_dim_ignores_entry_order(mut dims in prop::collection::vec(-1.0f64..=1.0, 1..40)) {
            let make = |v: &[f64]| report(v.iter().enumerate().map(|(i, x)| dim("c", &format!("a{i}"), *x)).collect(), vec![cim("c", "a", &[0.0])]).summary.dim;
            let before = make(&dims);
            dims.reverse();
            prop_assert!((before - make(&dims)).abs() < 1e-12);
        }
    }
}
