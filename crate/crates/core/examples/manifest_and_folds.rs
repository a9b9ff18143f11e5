//! Build a manifest, validate it, and split it into source-disjoint folds.

use evaltalker::dataset::{make_folds, parse_manifest, validate_manifest};
use evaltalker::synthetic::synthetic_manifest;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let set = synthetic_manifest(12, &["G1", "G2", "G3"], 5);
    let reparsed = parse_manifest(set.to_jsonl().as_bytes())?;
    assert_eq!(reparsed.len(), set.len());

    let report = validate_manifest(&reparsed);
    println!("{} stimuli from {} sources, valid: {}", set.len(), set.source_ids().len(), report.is_valid());
    for (label, n) in set.counts_by_label() {
        println!("  {label}: {n}");
    }

    let plan = make_folds(&set, 4, 1)?;
    for (f, sources) in plan.folds().iter().enumerate() {
        println!("fold {f}: {}", sources.join(" "));
    }
    Ok(())
}
