//! Turn raw ratings into MOS and distortion labels, with one careless rater
//! caught by screening.

use evaltalker::subjective::{process_ratings, ProcessConfig};
use evaltalker::synthetic::{simulate_study, synthetic_manifest, StudyConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let set = synthetic_manifest(50, &["G1", "G2", "G3", "G4"], 3);
    let study = simulate_study(
        &set,
        &StudyConfig {
            raters: 20,
            adversarial: 1,
            seed: 3,
            ..Default::default()
        },
    );
    let (table, report) = process_ratings(&study.ratings, &ProcessConfig::default())?;

    println!("{} ratings in, {} stimuli out", report.rows_consumed, report.stimuli);
    println!("planted adversary: {:?}", study.adversarial_ids);
    for (subject, why) in &report.rejected_subjects {
        println!("rejected {subject}: {why:?}");
    }
    for (id, row) in table.rows.iter().take(5) {
        println!("{id}  mos {:.3}  distortions {:?}", row.mos, row.labels.bits());
    }
    Ok(())
}
