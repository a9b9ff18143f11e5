//! Drive the study service in process with a manual clock: one rater
//! finishes a session, is told to take a break, then continues.

use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use evaltalker::study::{ManualClock, RatingSubmission, ServiceConfig, StudyService};
use evaltalker::synthetic::synthetic_manifest;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let set = synthetic_manifest(6, &["G1", "G2"], 4);
    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2025, 6, 2, 9, 0, 0).unwrap()));
    let config = ServiceConfig {
        max_per_session: 5,
        sync_writes: false,
        ..Default::default()
    };
    let mut service = StudyService::open(dir.path(), &set, config, clock.clone())?;
    println!("{} stimuli in {} sessions", set.len(), service.plan().len());

    service.register("ada")?;
    let first = service.start_session("ada", "s01")?.expect("fresh rater may start");
    println!("started {} ({} items)", first.session_id, first.total);
    loop {
        let item = service.next("ada", "s01")?;
        let receipt = service.record_rating(&RatingSubmission {
            subject_id: "ada".into(),
            stimulus_id: item.stimulus_id.clone(),
            q: 1.0 + item.position as f64 * 0.5,
            d: vec![false; 12],
        })?;
        if receipt.session_finished {
            break;
        }
    }

    match service.start_session("ada", "s02")? {
        Ok(_) => println!("unexpected: no break enforced"),
        Err(denial) => println!("denied: {} (retry after {:?} s)", denial.reason.as_str(), denial.retry_after_s),
    }
    clock.advance(Duration::minutes(30));
    let second = service.start_session("ada", "s02")?.expect("break is over");
    println!("after the break: started {}", second.session_id);

    let mut csv = Vec::new();
    service.export_ratings(&mut csv)?;
    println!("exported:\n{}", String::from_utf8(csv)?);
    Ok(())
}
