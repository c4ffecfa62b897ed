//! Attribute-concept scores for a small hand-made score matrix.
//!
//! Rows are images of "bird", columns are alignment scores against
//! "a perched bird", "a flying bird", "a swimming bird".

use dimcim::scoring::{score_all, ScoreKind, ScoreMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let attributes = ["perched", "flying", "swimming"].map(String::from).to_vec();
    let rows = vec![
        ("img-0".to_string(), vec![0.91, 0.12, 0.08]),
        ("img-1".to_string(), vec![0.88, 0.20, 0.10]),
        ("img-2".to_string(), vec![0.15, 0.86, 0.05]),
        ("img-3".to_string(), vec![0.93, 0.09, 0.11]),
    ];
    let m = ScoreMatrix::from_rows("bird/state", "bird", "state", ScoreKind::Coarse, attributes, rows)?;

    let scores = score_all(&m)?;
    for s in &scores {
        println!("{:<10} S = {:+.4}", s.attribute, s.value);
    }
    // Every row contributes to all columns, so the scores cancel out.
    let total: f64 = scores.iter().map(|s| s.value).sum();
    println!("sum over attributes = {total:+.1e}");
    Ok(())
}
