//! Scenario loading, experiment execution and the on-disk output bundle.
//!
//! A run directory contains:
//!
//! * `drift_error.csv`: `trial,t,edge_i,edge_j,xi_err_m,eta_err_m` for every jttsl trial
//! * `rmse.csv`: `t,variant,rmse_m`
//! * `summary.json`: resolved parameters, flag overrides, version, wall time and headline numbers
//! * `resolved.scenario`: the scenario as executed, in scenario-file syntax

pub mod scenario_file;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Map, Value};

pub use scenario_file::{parse_scenario, parse_scenario_str, scenario_to_string, ScenarioFile};

use crate::error::{Error, Result};
use crate::simulator::{monte_carlo_with, run_variant_logged, MonteCarloSummary, Scenario, TrialData, Variant};

pub const DRIFT_CSV: &str = "drift_error.csv";
pub const RMSE_CSV: &str = "rmse.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const RESOLVED_SCENARIO: &str = "resolved.scenario";

/// Flags of the `run` subcommand. Overrides take precedence over the file.
#[derive(Debug, Clone, clap::Args)]
pub struct RunFlags {
    /// Scenario file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory, created if absent.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Consensus rounds per sampling interval (L).
    #[arg(long)]
    pub consensus_steps: Option<usize>,
    /// Restrict to these variants; repeatable.
    #[arg(long = "variant")]
    pub variants: Vec<Variant>,
    /// Enable gated fusion with this loss threshold.
    #[arg(long)]
    pub gate_threshold: Option<f64>,
    /// Write trial 0's jttsl consensus messages here in the flat binary layout.
    #[arg(long)]
    pub message_log: Option<PathBuf>,
}

impl RunFlags {
    pub fn new(scenario: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        RunFlags {
            scenario: scenario.into(),
            out: out.into(),
            seed: None,
            trials: None,
            consensus_steps: None,
            variants: Vec::new(),
            gate_threshold: None,
            message_log: None,
        }
    }

    /// Applies the overrides and returns them as recorded in the summary.
    pub fn apply(&self, sc: &mut Scenario) -> Map<String, Value> {
        let mut applied = Map::new();
        if let Some(seed) = self.seed {
            sc.seed = seed;
            applied.insert("seed".into(), json!(seed));
        }
        if let Some(trials) = self.trials {
            sc.trials = trials;
            applied.insert("trials".into(), json!(trials));
        }
        if let Some(l) = self.consensus_steps {
            sc.consensus_steps = l;
            applied.insert("consensus_steps".into(), json!(l));
        }
        if !self.variants.is_empty() {
            sc.variants = self.variants.clone();
            sc.variants.dedup();
            applied.insert("variants".into(), json!(sc.variants));
        }
        if let Some(g) = self.gate_threshold {
            sc.gate_threshold = Some(g);
            applied.insert("gate_threshold".into(), json!(g));
        }
        applied
    }
}

/// Process exit code for a failed run: 2 for configuration and I/O problems, 3 otherwise.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Io { .. } => 2,
        _ => 3,
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: Scenario,
    pub summary: MonteCarloSummary,
    pub out: PathBuf,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.display().to_string(), message: e.to_string() }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

pub fn run(flags: &RunFlags) -> Result<RunReport> {
    let started = Instant::now();
    let mut sc = parse_scenario(&flags.scenario)?;
    let overrides = flags.apply(&mut sc);
    sc.validate()?;

    std::fs::create_dir_all(&flags.out).map_err(io_err(&flags.out))?;

    if let Some(path) = &flags.message_log {
        let mut log = create(path)?;
        run_variant_logged(&sc, &TrialData::generate(&sc, 0)?, Variant::Jttsl, &mut log)?;
        log.flush().map_err(io_err(path))?;
    }

    let drift_path = flags.out.join(DRIFT_CSV);
    let mut drift = create(&drift_path)?;
    writeln!(drift, "trial,t,edge_i,edge_j,xi_err_m,eta_err_m").map_err(io_err(&drift_path))?;
    let order: Vec<usize> = (0..sc.trials).collect();
    let summary = monte_carlo_with(&sc, &order, |trial, results| {
        for r in results.iter().filter(|r| r.variant == Variant::Jttsl) {
            for (t, errs) in r.drift_errors.iter().enumerate() {
                for e in errs {
                    writeln!(drift, "{trial},{t},{},{},{},{}", e.i, e.j, e.xi_err_m, e.eta_err_m)
                        .map_err(io_err(&drift_path))?;
                }
            }
        }
        Ok(())
    })?;
    drift.flush().map_err(io_err(&drift_path))?;

    let rmse_path = flags.out.join(RMSE_CSV);
    let mut rmse = create(&rmse_path)?;
    writeln!(rmse, "t,variant,rmse_m").map_err(io_err(&rmse_path))?;
    for s in &summary.rmse {
        for (t, v) in s.values.iter().enumerate() {
            writeln!(rmse, "{t},{},{v}", s.variant).map_err(io_err(&rmse_path))?;
        }
    }
    rmse.flush().map_err(io_err(&rmse_path))?;

    let resolved_path = flags.out.join(RESOLVED_SCENARIO);
    std::fs::write(&resolved_path, scenario_to_string(&sc)).map_err(io_err(&resolved_path))?;

    let steady: Map<String, Value> =
        summary.rmse.iter().map(|s| (s.variant.to_string(), json!(s.tail_mean(0.25)))).collect();
    let mut doc = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": ScenarioFile::from(&sc),
        "seed": sc.seed,
        "trials": sc.trials,
        "overrides": overrides,
        "steady_state_rmse_m": steady,
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    if let Some(d) = &summary.drift {
        doc["drift"] = json!({
            "initial_median_max_error_m": d.initial_median_max_error_m,
            "final_median_max_error_m": d.median_max_error_m.last(),
        });
    }
    let summary_path = flags.out.join(SUMMARY_JSON);
    let text = serde_json::to_string_pretty(&doc).expect("summary is plain JSON");
    std::fs::write(&summary_path, text + "\n").map_err(io_err(&summary_path))?;

    Ok(RunReport { scenario: sc, summary, out: flags.out.clone() })
}
