//! Plot data: CSV files plus a small declarative JSON spec per figure.
//! Nothing here renders images.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::analysis::TrainingAuditResult;
use crate::metrics::MetricReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    /// Per concept: one point per attribute at (DIM, CIM).
    DimCimScatter,
    /// DIM per attribute, grouped by concept and type.
    DimBars,
    /// CIM per attribute, grouped by concept and type.
    CimBars,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::DimCimScatter => "dim-cim-scatter",
            Figure::DimBars => "dim-bars",
            Figure::CimBars => "cim-bars",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Axis {
    pub field: String,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotSpec {
    pub figure: String,
    pub mark: String,
    pub title: String,
    pub x: Axis,
    pub y: Axis,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub series: Vec<Series>,
}

/// A file to write, relative to the figures directory.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureFile {
    pub path: String,
    pub bytes: Vec<u8>,
}

fn axis(field: &str, label: &str, domain: Option<[f64; 2]>) -> Axis {
    Axis {
        field: field.into(),
        label: label.into(),
        domain,
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(w.into_inner().expect("flushed"))
}

fn spec_file(stem: &str, spec: &PlotSpec) -> FigureFile {
    FigureFile {
        path: format!("{stem}.plot.json"),
        bytes: (serde_json::to_string_pretty(spec).expect("spec serializes") + "\n").into_bytes(),
    }
}

/// Safe file-name stem for a model or concept name.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Data files and plot spec for one figure of one report. Paths start with
/// the model's file stem.
pub fn report_figure(report: &MetricReport, figure: Figure) -> Result<Vec<FigureFile>, csv::Error> {
    let model = file_stem(&report.model_id);
    let stem = format!("{model}/{}", figure.name());
    let mut files = Vec::new();
    let spec = match figure {
        Figure::DimCimScatter => {
            let mut by_concept: BTreeMap<&str, Vec<Vec<String>>> = BTreeMap::new();
            for d in &report.dim_entries {
                if let Some(c) = report.cim_entry(&d.concept, &d.attribute_type, &d.attribute) {
                    by_concept.entry(&d.concept).or_default().push(vec![
                        d.attribute.clone(),
                        d.value.to_string(),
                        c.value.to_string(),
                    ]);
                }
            }
            let mut series = Vec::new();
            for (concept, rows) in by_concept {
                let path = format!("{stem}/{}.csv", file_stem(concept));
                files.push(FigureFile {
                    path: path.clone(),
                    bytes: csv_bytes(&["attribute", "dim", "cim"], rows)?,
                });
                series.push(Series {
                    name: concept.to_string(),
                    data: path,
                });
            }
            PlotSpec {
                figure: figure.name().into(),
                mark: "point".into(),
                title: format!("{}: DIM vs CIM per attribute", report.model_id),
                x: axis("dim", "DIM", Some([-1.0, 1.0])),
                y: axis("cim", "CIM", Some([-1.0, 1.0])),
                label: Some("attribute".into()),
                series,
            }
        }
        Figure::DimBars | Figure::CimBars => {
            let (field, rows): (&str, Vec<Vec<String>>) = if figure == Figure::DimBars {
                let rows = report
                    .dim_entries
                    .iter()
                    .map(|e| {
                        vec![
                            e.concept.clone(),
                            e.attribute_type.clone(),
                            e.attribute.clone(),
                            e.value.to_string(),
                        ]
                    })
                    .collect();
                ("dim", rows)
            } else {
                let rows = report
                    .cim_entries
                    .iter()
                    .map(|e| {
                        vec![
                            e.concept.clone(),
                            e.attribute_type.clone(),
                            e.attribute.clone(),
                            e.value.to_string(),
                        ]
                    })
                    .collect();
                ("cim", rows)
            };
            let path = format!("{stem}.csv");
            files.push(FigureFile {
                path: path.clone(),
                bytes: csv_bytes(&["concept", "attribute_type", "attribute", field], rows)?,
            });
            PlotSpec {
                figure: figure.name().into(),
                mark: "bar".into(),
                title: format!("{}: {} per attribute", report.model_id, field.to_uppercase()),
                x: axis("attribute", "attribute", None),
                y: axis(field, &field.to_uppercase(), Some([-1.0, 1.0])),
                label: Some("concept".into()),
                series: vec![Series {
                    name: report.model_id.clone(),
                    data: path,
                }],
            }
        }
    };
    files.push(spec_file(&stem, &spec));
    Ok(files)
}

/// Spec for a training-vs-generated DIM scatter over an audit CSV.
pub fn audit_scatter_spec(audit_csv: &str, results: &[TrainingAuditResult]) -> FigureFile {
    let spec = PlotSpec {
        figure: "train-gen-scatter".into(),
        mark: "point".into(),
        title: format!("Training vs generated DIM ({} attributes)", results.len()),
        x: axis("train_dim", "training DIM", Some([-1.0, 1.0])),
        y: axis("gen_dim", "generated DIM", Some([-1.0, 1.0])),
        label: Some("attribute".into()),
        series: vec![Series {
            name: "attributes".into(),
            data: audit_csv.into(),
        }],
    };
    spec_file("train_gen_scatter", &spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{CimEntry, DimEntry, PromptScore, Summary};

    fn report() -> MetricReport {
        let dim = |a: &str, v| DimEntry {
            concept: "bird".into(),
            attribute_type: "state".into(),
            attribute: a.into(),
            value: v,
            n_images: 30,
        };
        let cim = |a: &str, v| CimEntry {
            concept: "bird".into(),
            attribute_type: "state".into(),
            attribute: a.into(),
            value: v,
            n_prompts: 1,
            per_prompt: vec![PromptScore {
                prompt_id: "p".into(),
                value: v,
            }],
        };
        MetricReport {
            model_id: "m 1".into(),
            dataset_hash: "h".into(),
            config: None,
            dim_averaging: Default::default(),
            summary: Summary { dim: 0.5, cim: 0.5 },
            dim_entries: vec![dim("perched", 0.5), dim("flying", -0.5)],
            cim_entries: vec![cim("perched", 0.8), cim("flying", 0.2)],
            dim_breakdown: Vec::new(),
            rollups: Default::default(),
        }
    }

    #[test]
    fn scatter_has_attribute_dim_cim_columns() {
        let files = report_figure(&report(), Figure::DimCimScatter).unwrap();
        assert_eq!(files[0].path, "m_1/dim-cim-scatter/bird.csv");
        assert_eq!(
            String::from_utf8(files[0].bytes.clone()).unwrap(),
            "attribute,dim,cim\nperched,0.5,0.8\nflying,-0.5,0.2\n"
        );
        let spec: serde_json::Value = serde_json::from_slice(&files[1].bytes).unwrap();
        assert_eq!(spec["series"][0]["data"], "m_1/dim-cim-scatter/bird.csv");
        assert_eq!(spec["x"]["field"], "dim");
    }

    #[test]
    fn bars() {
        let files = report_figure(&report(), Figure::CimBars).unwrap();
        assert!(String::from_utf8(files[0].bytes.clone())
            .unwrap()
            .starts_with("concept,attribute_type,attribute,cim\nbird,state,perched,0.8\n"));
    }
}
