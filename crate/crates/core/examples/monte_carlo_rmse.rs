//! Runs a shipped scenario end to end through the library's run entry point and
//! writes the CSV/JSON bundle.
//!
//! ```text
//! cargo run --release --example monte_carlo_rmse [scenario] [trials]
//! ```

use std::path::PathBuf;

use jttsl::cli::{run, RunFlags};

fn main() -> jttsl::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let scenario = args.next().map_or(dir.join("tree9_linear_rls_l10.scenario"), PathBuf::from);
    let out = std::env::temp_dir().join("jttsl-monte-carlo");

    let mut flags = RunFlags::new(&scenario, &out);
    flags.trials = Some(args.next().map_or(20, |t| t.parse().expect("integer trial count")));
    let report = run(&flags)?;

    for s in &report.summary.rmse {
        let v = &s.values;
        println!(
            "{:<18} RMSE at t=0: {:8.2} m   t={}: {:8.2} m   last quarter mean: {:8.2} m",
            s.variant,
            v[0],
            v.len() / 2,
            v[v.len() / 2],
            s.tail_mean(0.25)
        );
    }
    println!("bundle written to {}", out.display());
    Ok(())
}
