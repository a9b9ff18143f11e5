//! Agreement between predictions and MOS, with and without the logistic map.

use evaltalker::metrics::compute_report;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mos: Vec<f64> = (0..40).map(|i| 5.0 * i as f64 / 39.0).collect();
    // A monotone but nonlinear predictor with a little jitter.
    let pred: Vec<f64> = mos
        .iter()
        .enumerate()
        .map(|(i, m)| (m * 0.9).tanh() + 0.02 * ((i * 7 % 5) as f64 - 2.0))
        .collect();

    for fitted in [false, true] {
        let r = compute_report(&pred, &mos, fitted)?;
        println!(
            "fitted={fitted:<5} srcc {:.4} plcc {:.4} krcc {:.4} rmse {:.4}",
            r.srcc, r.plcc, r.krcc, r.rmse
        );
        if let Some(p) = r.logistic_params() {
            println!("  logistic params {p:?}");
        }
    }
    Ok(())
}
