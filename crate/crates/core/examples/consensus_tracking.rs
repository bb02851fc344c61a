//! One trial on the 9-node tree with linear sensors: every estimator variant
//! on the same data, plus the per-edge drift errors of the calibrating filter.
//!
//! ```text
//! cargo run --release --example consensus_tracking
//! ```

use jttsl::drift_cal::DriftUpdateMode;
use jttsl::simulator::{rmse, run_variant, Scenario, SensorSpec, TopologySpec, TrialData, Variant};

fn main() -> jttsl::Result<()> {
    let mut sc = Scenario::new(TopologySpec::Tree9, SensorSpec::linear_default());
    sc.horizon = 400;
    sc.consensus_steps = 3;
    sc.calibration.mode = DriftUpdateMode::RlsPerRound;
    let data = TrialData::generate(&sc, 0)?;

    for v in Variant::ALL {
        let result = run_variant(&sc, &data, v)?;
        let series = rmse(std::slice::from_ref(&result))?;
        println!("{v:<18} mean position RMSE over the last 100 steps: {:8.2} m", series.tail_mean(0.25));
        if v == Variant::Jttsl {
            let last = result.drift_errors.last().expect("non-empty horizon");
            let worst = last.iter().map(|e| e.norm()).fold(0.0, f64::max);
            let first = result.initial_drift_errors.iter().map(|e| e.norm()).fold(0.0, f64::max);
            println!("{:<18} largest edge drift error {first:.1} m -> {worst:.1} m", "");
        }
    }
    Ok(())
}
