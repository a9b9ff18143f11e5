//! Extract stub features, train the regression head per fold and score the
//! held-out predictions.

use std::collections::{BTreeMap, BTreeSet};

use evaltalker::dataset::make_folds;
use evaltalker::metrics::evaluate_folds;
use evaltalker::model::stub::oracle_backends;
use evaltalker::model::{extract_all, train, ManifestProbe, StubDims, TrainConfig};
use evaltalker::subjective::{process_ratings, ProcessConfig};
use evaltalker::synthetic::{simulate_study, synthetic_manifest, StudyConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let set = synthetic_manifest(30, &["G1", "G2", "G3"], 2);
    let study = simulate_study(&set, &StudyConfig { seed: 2, ..Default::default() });
    let (table, _) = process_ratings(&study.ratings, &ProcessConfig::default())?;
    let mos: BTreeMap<String, f64> = table.rows.iter().map(|(k, r)| (k.clone(), r.mos)).collect();

    // The oracle set plants MOS in the global branch, so a working head
    // should recover it almost exactly.
    let backends = oracle_backends(2, StubDims::default(), mos.clone());
    let cache = extract_all(&set, &backends, &ManifestProbe, None)?;
    let features = cache.fused()?;

    let plan = make_folds(&set, 3, 2)?;
    let config = TrainConfig { epochs: 150, seed: 2, ..Default::default() };
    let out = train(&features, &set.source_map(), &table, &plan, &config)?;

    let members: Vec<BTreeSet<String>> = out.predictions.iter().map(|p| p.keys().cloned().collect()).collect();
    let report = evaluate_folds(&out.predictions, &mos, &members, true)?;
    for f in &report.folds {
        println!("fold {}: srcc {:.4} plcc {:.4}", f.fold, f.report.srcc, f.report.plcc);
    }
    println!("mean: srcc {:.4} plcc {:.4}", report.mean.srcc, report.mean.plcc);
    Ok(())
}
