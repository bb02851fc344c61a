//! Records every consensus message of a short run in the flat binary layout and
//! decodes a few of them back.
//!
//! ```text
//! cargo run --example message_log
//! ```

use jttsl::cskf::{ConsensusMessage, MESSAGE_BYTES};
use jttsl::simulator::{run_variant_logged, Scenario, SensorSpec, TopologySpec, TrialData, Variant};

fn main() -> jttsl::Result<()> {
    let mut sc = Scenario::new(TopologySpec::Cycle9, SensorSpec::linear_default());
    sc.horizon = 4;
    sc.consensus_steps = 2;
    let data = TrialData::generate(&sc, 0)?;
    let mut log = Vec::new();
    run_variant_logged(&sc, &data, Variant::Jttsl, &mut log)?;

    println!("{} messages, {MESSAGE_BYTES} bytes each", log.len() / MESSAGE_BYTES);
    for record in log.chunks_exact(MESSAGE_BYTES).step_by(17).take(5) {
        let m = ConsensusMessage::from_bytes(record)?;
        let x = m.belief.mean()?;
        println!(
            "node {} t={} round={} -> position estimate ({:.1}, {:.1}) in its own frame",
            m.sender, m.time, m.round, x[0], x[2]
        );
    }
    Ok(())
}
