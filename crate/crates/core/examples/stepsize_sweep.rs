//! How the gradient stepsize sets the speed of self-localization.
//!
//! ```text
//! cargo run --release --example stepsize_sweep [horizon] [trials]
//! ```

use jttsl::simulator::{monte_carlo, Scenario, SensorSpec, TopologySpec, Variant};

fn main() -> jttsl::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let horizon = args.next().unwrap_or(3000);
    let trials = args.next().unwrap_or(10);

    println!("{:>6} {:>18} {:>22}", "gamma", "steps to 50%", "final median error [m]");
    for gamma in [0.6, 1.2, 4.8, 19.2] {
        let mut sc = Scenario::new(TopologySpec::Tree9, SensorSpec::linear_default());
        sc.calibration.gamma = gamma;
        sc.horizon = horizon;
        sc.trials = trials;
        sc.variants = vec![Variant::Jttsl];
        let drift = monte_carlo(&sc)?.drift.expect("jttsl requested");
        let half = drift.first_below(0.5).map_or("not reached".to_owned(), |t| t.to_string());
        println!("{gamma:>6} {half:>18} {:>22.1}", drift.median_max_error_m.last().unwrap());
    }
    Ok(())
}
