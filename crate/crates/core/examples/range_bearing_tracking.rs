//! Extended (linearized) consensus filtering with range-bearing sensors on the
//! network with cycles: a short track printed for node 5 next to the truth.
//!
//! ```text
//! cargo run --release --example range_bearing_tracking
//! ```

use jttsl::simulator::{run_variant, Scenario, SensorSpec, TopologySpec, TrialData, Variant};

fn main() -> jttsl::Result<()> {
    let mut sc = Scenario::new(TopologySpec::Cycle9, SensorSpec::range_bearing_default());
    sc.horizon = 60;
    let data = TrialData::generate(&sc, 3)?;
    let jttsl = run_variant(&sc, &data, Variant::Jttsl)?;
    let single = run_variant(&sc, &data, Variant::SingleSensor)?;
    let node = 4;

    println!("{:>4} {:>22} {:>22} {:>10} {:>10}", "t", "truth (node 5 frame)", "jttsl estimate", "err", "single err");
    for t in (0..sc.horizon).step_by(5) {
        let truth = jttsl.truths[t][node].position();
        let est = jttsl.estimates[t][node].position();
        println!(
            "{t:>4} ({:9.1}, {:9.1}) ({:9.1}, {:9.1}) {:10.2} {:10.2}",
            truth[0],
            truth[1],
            est[0],
            est[1],
            jttsl.position_error(t, node).norm(),
            single.position_error(t, node).norm(),
        );
    }
    Ok(())
}
