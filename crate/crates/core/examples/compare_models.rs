//! Compare stored reports of several models on the same dataset.

use std::path::Path;

use dimcim::metrics::{compare_reports, MetricReport};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/reports/models");
    let reports = ["ldm2_1", "flow_int", "ldm3_5l", "flux1_dev"]
        .iter()
        .map(|m| {
            Ok(MetricReport::from_json_str(&std::fs::read_to_string(
                dir.join(format!("{m}.json")),
            )?)?)
        })
        .collect::<Result<Vec<_>, Box<dyn std::error::Error>>>()?;
    let table = compare_reports(&reports)?;
    println!("{:<12} {:>6} {:>6} {:>8} {:>8}", "model", "DIM", "CIM", "dDIM", "dCIM");
    for r in &table.rows {
        println!(
            "{:<12} {:>6.3} {:>6.3} {:>+8.3} {:>+8.3}",
            r.model_id, r.dim, r.cim, r.delta_dim, r.delta_cim
        );
    }
    if let Some(best) = table.max_cim() {
        println!("highest CIM: {}", best.model_id);
    }
    print!("\n{}", String::from_utf8(table.to_csv()?)?);
    Ok(())
}
