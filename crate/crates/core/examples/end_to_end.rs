//! The whole pipeline on synthetic data, as `evaltalker e2e` runs it. The
//! per-fold tables are printed by the stage itself.

use evaltalker::cli::{e2e, E2eArgs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let summary = e2e(&E2eArgs {
        seed: 7,
        out: dir.path().to_path_buf(),
        sources: 40,
        generators: 3,
        raters: 20,
        k: 4,
        backend_sets: vec!["oracle".into(), "stub".into()],
        epochs: 100,
    })?;
    println!("{} stimuli, {} sources, {} folds", summary.stimuli, summary.sources, summary.k);
    let oracle = &summary.backend_sets["oracle"].mean;
    let stub = &summary.backend_sets["stub"].mean;
    println!("oracle minus stub SRCC: {:.4}", oracle.srcc - stub.srcc);
    Ok(())
}
