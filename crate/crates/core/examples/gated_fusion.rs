//! Gated fusion: nodes keep their own estimate until the consensus loss says
//! the drift estimates can be trusted, while calibration keeps running.
//!
//! ```text
//! cargo run --release --example gated_fusion
//! ```

use jttsl::simulator::{monte_carlo, Scenario, SensorSpec, TopologySpec, Variant};

fn main() -> jttsl::Result<()> {
    let mut sc = Scenario::new(TopologySpec::Tree9, SensorSpec::linear_default());
    sc.horizon = 1000;
    sc.trials = 10;
    sc.variants = vec![Variant::Jttsl, Variant::SingleSensor];

    println!("{:>10} {:>15} {:>15} {:>15}", "gate", "RMSE t<200 [m]", "RMSE t>=200 [m]", "single t<200");
    for gate in [None, Some(1e4), Some(1e3), Some(1e2)] {
        sc.gate_threshold = gate;
        let mc = monte_carlo(&sc)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let j = &mc.series(Variant::Jttsl).expect("requested").values;
        let s = &mc.series(Variant::SingleSensor).expect("requested").values;
        let label = gate.map_or("off".to_owned(), |g| g.to_string());
        println!("{label:>10} {:>15.2} {:>15.2} {:>15.2}", mean(&j[..200]), mean(&j[200..]), mean(&s[..200]));
    }
    Ok(())
}
