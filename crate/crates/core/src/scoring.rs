//! Alignment-query rendering, score matrices and the attribute-concept score.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::adapters::{bounded_map, score_alignment, AdapterError, AlignmentQuery, AlignmentScorer, ImageRef};
use crate::text::indefinite_article;

/// Leading words that make an attribute follow its concept.
pub const PREPOSITIONS: &[&str] = &["with", "without", "on", "in", "near", "under"];

/// Per-concept head-noun overrides for query rendering.
pub type StyleHints = BTreeMap<String, String>;

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("unit {unit_id}: every image row was dropped")]
    EmptyMatrix { unit_id: String },
    #[error("unit {unit_id}: attribute {attribute:?} is not a column")]
    UnknownAttribute { unit_id: String, attribute: String },
    #[error("unit {unit_id}: need at least 2 attributes, got {k}")]
    TooFewAttributes { unit_id: String, k: usize },
    #[error("unit {unit_id}: no images to score")]
    NoImages { unit_id: String },
    #[error("unit {unit_id}: {message}")]
    Malformed { unit_id: String, message: String },
    #[error(transparent)]
    Backend(#[from] AdapterError),
}

/// A truncated alignment query: concept plus attribute, nothing else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryText {
    pub concept: String,
    pub attribute: String,
    pub phrase: String,
}

fn head_noun<'a>(concept: &'a str, hints: Option<&'a StyleHints>) -> &'a str {
    hints.and_then(|h| h.get(concept)).map_or(concept, String::as_str)
}

/// "a metal table", "a bed without pillows", "an orange airplane".
pub fn render_query(concept: &str, attribute: &str, hints: Option<&StyleHints>) -> QueryText {
    let noun = head_noun(concept, hints);
    let attr = attribute.trim();
    let first = attr.split_whitespace().next().unwrap_or("").to_lowercase();
    let phrase = if PREPOSITIONS.contains(&first.as_str()) {
        format!("{} {noun} {attr}", indefinite_article(noun))
    } else {
        format!("{} {attr} {noun}", indefinite_article(attr))
    };
    QueryText {
        concept: concept.to_string(),
        attribute: attribute.to_string(),
        phrase,
    }
}

/// Query that names only the concept, e.g. "a photo of an apple".
pub fn render_concept_query(concept: &str, hints: Option<&StyleHints>) -> String {
    let noun = head_noun(concept, hints);
    format!("a photo of {} {noun}", indefinite_article(noun))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// From coarse-prompt (or training) images: a Does-It value.
    Coarse,
    /// From a dense prompt's images: a Can-It value.
    Dense,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Coarse => "coarse",
            ScoreKind::Dense => "dense",
        }
    }
}

/// An image row removed from a matrix, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRow {
    pub image_id: String,
    pub reason: String,
}

/// Complete n x k grid of image-attribute scores for one evaluation unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub unit_id: String,
    pub concept: String,
    pub attribute_type: String,
    pub kind: ScoreKind,
    pub image_ids: Vec<String>,
    pub attributes: Vec<String>,
    /// Row-major, `image_ids.len() * attributes.len()` values.
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<DroppedRow>,
}

impl ScoreMatrix {
    /// Builds a matrix from rows, checking shape and range.
    pub fn from_rows(
        unit_id: impl Into<String>,
        concept: impl Into<String>,
        attribute_type: impl Into<String>,
        kind: ScoreKind,
        attributes: Vec<String>,
        rows: Vec<(String, Vec<f64>)>,
    ) -> Result<Self, ScoringError> {
        let unit_id = unit_id.into();
        let k = attributes.len();
        if k < 2 {
            return Err(ScoringError::TooFewAttributes { unit_id, k });
        }
        if rows.is_empty() {
            return Err(ScoringError::EmptyMatrix { unit_id });
        }
        let mut image_ids = Vec::with_capacity(rows.len());
        let mut scores = Vec::with_capacity(rows.len() * k);
        for (id, row) in rows {
            if row.len() != k {
                return Err(ScoringError::Malformed {
                    message: format!("row {id} has {} values for {k} attributes", row.len()),
                    unit_id,
                });
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(ScoringError::Malformed {
                    message: format!("row {id} has score {v} outside [0, 1]"),
                    unit_id,
                });
            }
            image_ids.push(id);
            scores.extend(row);
        }
        Ok(Self {
            unit_id,
            concept: concept.into(),
            attribute_type: attribute_type.into(),
            kind,
            image_ids,
            attributes,
            scores,
            dropped: Vec::new(),
        })
    }

    pub fn n_images(&self) -> usize {
        self.image_ids.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn get(&self, image: usize, attribute: usize) -> f64 {
        self.scores[image * self.attributes.len() + attribute]
    }

    pub fn row(&self, image: usize) -> &[f64] {
        let k = self.attributes.len();
        &self.scores[image * k..(image + 1) * k]
    }

    pub fn attribute_index(&self, attribute: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == attribute)
    }

    /// Stacks the rows of several matrices over the same attribute list.
    pub fn pool<'a>(
        unit_id: impl Into<String>,
        matrices: impl IntoIterator<Item = &'a ScoreMatrix>,
    ) -> Result<Self, ScoringError> {
        let unit_id = unit_id.into();
        let mut iter = matrices.into_iter();
        let first = iter.next().ok_or_else(|| ScoringError::NoImages {
            unit_id: unit_id.clone(),
        })?;
        let mut pooled = first.clone();
        pooled.unit_id = unit_id;
        for m in iter {
            if m.attributes != pooled.attributes
                || m.concept != pooled.concept
                || m.attribute_type != pooled.attribute_type
            {
                return Err(ScoringError::Malformed {
                    unit_id: pooled.unit_id,
                    message: format!("cannot pool {} with a different attribute set", m.unit_id),
                });
            }
            pooled.image_ids.extend(m.image_ids.iter().cloned());
            pooled.scores.extend_from_slice(&m.scores);
            pooled.dropped.extend(m.dropped.iter().cloned());
        }
        Ok(pooled)
    }

    /// Per-column sums, each accumulated pairwise over the sorted column so
    /// row order cannot change the last bit.
    fn column_sums(&self) -> Vec<f64> {
        let n = self.n_images();
        let mut column = Vec::with_capacity(n);
        (0..self.n_attributes())
            .map(|j| {
                column.clear();
                column.extend((0..n).map(|i| self.get(i, j)));
                column.sort_by(f64::total_cmp);
                pairwise_sum(&column)
            })
            .collect()
    }
}

/// Sum with O(log n) error growth.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// S(unit, attribute) together with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeConceptScore {
    pub unit_id: String,
    pub concept: String,
    pub attribute_type: String,
    pub attribute: String,
    pub value: f64,
    pub n_images: usize,
    pub kind: ScoreKind,
}

fn score_from_sums(sums: &[f64], target: usize, n: usize) -> f64 {
    let k = sums.len();
    let others: Vec<f64> = sums
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != target)
        .map(|(_, s)| *s)
        .collect();
    let value = sums[target] / n as f64 - pairwise_sum(&others) / (n as f64 * (k - 1) as f64);
    value.clamp(-1.0, 1.0)
}

/// Mean score of the target column minus the mean over all other cells.
pub fn attribute_concept_score(matrix: &ScoreMatrix, target: &str) -> Result<AttributeConceptScore, ScoringError> {
    let j = matrix
        .attribute_index(target)
        .ok_or_else(|| ScoringError::UnknownAttribute {
            unit_id: matrix.unit_id.clone(),
            attribute: target.to_string(),
        })?;
    check_shape(matrix)?;
    let value = score_from_sums(&matrix.column_sums(), j, matrix.n_images());
    Ok(make_score(matrix, j, value))
}

/// One score per attribute column; the values sum to zero.
pub fn score_all(matrix: &ScoreMatrix) -> Result<Vec<AttributeConceptScore>, ScoringError> {
    check_shape(matrix)?;
    let sums = matrix.column_sums();
    Ok((0..matrix.n_attributes())
        .map(|j| make_score(matrix, j, score_from_sums(&sums, j, matrix.n_images())))
        .collect())
}

fn check_shape(matrix: &ScoreMatrix) -> Result<(), ScoringError> {
    let k = matrix.n_attributes();
    if k < 2 {
        return Err(ScoringError::TooFewAttributes {
            unit_id: matrix.unit_id.clone(),
            k,
        });
    }
    if matrix.n_images() == 0 {
        return Err(ScoringError::EmptyMatrix {
            unit_id: matrix.unit_id.clone(),
        });
    }
    if matrix.scores.len() != matrix.n_images() * k {
        return Err(ScoringError::Malformed {
            unit_id: matrix.unit_id.clone(),
            message: "score grid does not match its id lists".into(),
        });
    }
    Ok(())
}

fn make_score(matrix: &ScoreMatrix, j: usize, value: f64) -> AttributeConceptScore {
    AttributeConceptScore {
        unit_id: matrix.unit_id.clone(),
        concept: matrix.concept.clone(),
        attribute_type: matrix.attribute_type.clone(),
        attribute: matrix.attributes[j].clone(),
        value,
        n_images: matrix.n_images(),
        kind: matrix.kind,
    }
}

/// What to score: a unit's images against one attribute type.
#[derive(Debug, Clone, Copy)]
pub struct MatrixSpec<'a> {
    pub unit_id: &'a str,
    pub concept: &'a str,
    pub attribute_type: &'a str,
    pub attributes: &'a [String],
    pub kind: ScoreKind,
}

/// Scores every (image, attribute) pair. Rows with a per-image failure are
/// dropped and recorded; backend-level failures abort.
pub fn build_score_matrix(
    spec: MatrixSpec<'_>,
    images: &[ImageRef],
    scorer: &dyn AlignmentScorer,
    hints: Option<&StyleHints>,
) -> Result<ScoreMatrix, ScoringError> {
    let k = spec.attributes.len();
    if k < 2 {
        return Err(ScoringError::TooFewAttributes {
            unit_id: spec.unit_id.to_string(),
            k,
        });
    }
    if images.is_empty() {
        return Err(ScoringError::NoImages {
            unit_id: spec.unit_id.to_string(),
        });
    }
    let queries: Vec<String> = spec
        .attributes
        .iter()
        .map(|a| render_query(spec.concept, a, hints).phrase)
        .collect();
    let cells: Vec<(usize, usize)> = (0..images.len()).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    let results = bounded_map(&cells, scorer.max_concurrency(), |&(i, j)| {
        let query = AlignmentQuery {
            image: images[i].clone(),
            text: queries[j].clone(),
        };
        score_alignment(scorer, &query)
    });

    let mut rows = Vec::with_capacity(images.len());
    let mut dropped = Vec::new();
    for (i, chunk) in results.chunks(k).enumerate() {
        let mut row = Vec::with_capacity(k);
        let mut failure = None;
        for r in chunk {
            match r {
                Ok(v) => row.push(*v),
                Err(e) if e.is_fatal() => return Err(e.clone().into()),
                Err(e) => {
                    failure.get_or_insert_with(|| e.to_string());
                }
            }
        }
        match failure {
            None => rows.push((images[i].id.clone(), row)),
            Some(reason) => {
                log::warn!("{}: dropping image {}: {reason}", spec.unit_id, images[i].id);
                dropped.push(DroppedRow {
                    image_id: images[i].id.clone(),
                    reason,
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(ScoringError::EmptyMatrix {
            unit_id: spec.unit_id.to_string(),
        });
    }
    let mut m = ScoreMatrix::from_rows(
        spec.unit_id,
        spec.concept,
        spec.attribute_type,
        spec.kind,
        spec.attributes.to_vec(),
        rows,
    )?;
    m.dropped = dropped;
    Ok(m)
}

/// One line of the score-cell interchange file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    pub unit_id: String,
    pub image_id: String,
    pub concept: String,
    pub attribute_type: String,
    pub attribute: String,
    pub score: f64,
}

/// Flattens matrices into cells, row by row.
pub fn matrices_to_cells(matrices: &[ScoreMatrix]) -> Vec<ScoreCell> {
    let mut out = Vec::new();
    for m in matrices {
        for (i, image_id) in m.image_ids.iter().enumerate() {
            for (j, attribute) in m.attributes.iter().enumerate() {
                out.push(ScoreCell {
                    unit_id: m.unit_id.clone(),
                    image_id: image_id.clone(),
                    concept: m.concept.clone(),
                    attribute_type: m.attribute_type.clone(),
                    attribute: attribute.clone(),
                    score: m.get(i, j),
                });
            }
        }
    }
    out
}

/// Regroups cells into one matrix per (unit, attribute type), keeping first-seen
/// order of units, images and attributes. Incomplete rows are dropped.
pub fn matrices_from_cells(
    cells: &[ScoreCell],
    kind_of: impl Fn(&str) -> ScoreKind,
) -> Result<Vec<ScoreMatrix>, ScoringError> {
    struct Group<'a> {
        concept: &'a str,
        images: Vec<&'a str>,
        attributes: Vec<&'a str>,
        values: HashMap<(&'a str, &'a str), f64>,
    }
    let mut order: Vec<(&str, &str)> = Vec::new();
    let mut groups: HashMap<(&str, &str), Group> = HashMap::new();
    for c in cells {
        let key = (c.unit_id.as_str(), c.attribute_type.as_str());
        let g = groups.entry(key).or_insert_with(|| {
            order.push(key);
            Group {
                concept: &c.concept,
                images: Vec::new(),
                attributes: Vec::new(),
                values: HashMap::new(),
            }
        });
        if g.concept != c.concept {
            return Err(ScoringError::Malformed {
                unit_id: c.unit_id.clone(),
                message: format!("cells disagree on concept ({} vs {})", g.concept, c.concept),
            });
        }
        if !g.images.contains(&c.image_id.as_str()) {
            g.images.push(&c.image_id);
        }
        if !g.attributes.contains(&c.attribute.as_str()) {
            g.attributes.push(&c.attribute);
        }
        g.values.insert((&c.image_id, &c.attribute), c.score);
    }
    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let g = &groups[&key];
        let mut rows = Vec::new();
        let mut dropped = Vec::new();
        for img in &g.images {
            let row: Option<Vec<f64>> = g
                .attributes
                .iter()
                .map(|a| g.values.get(&(*img, *a)).copied())
                .collect();
            match row {
                Some(r) => rows.push((img.to_string(), r)),
                None => dropped.push(DroppedRow {
                    image_id: img.to_string(),
                    reason: "missing score cell".into(),
                }),
            }
        }
        let mut m = ScoreMatrix::from_rows(
            key.0,
            g.concept,
            key.1,
            kind_of(key.0),
            g.attributes.iter().map(|a| a.to_string()).collect(),
            rows,
        )?;
        m.dropped = dropped;
        out.push(m);
    }
    Ok(out)
}
