//! TOML scenario files. Units are part of every key name.
//!
//! ```toml
//! [motion]
//! step_s = 1.0
//! sigma_x_m = 10.0
//! initial_position_m = [1000.0, 1000.0]
//! initial_velocity_mps = [10.0, 5.0]
//!
//! [sensors]
//! kind = "linear"            # or "range_bearing" with sigma_r_m, sigma_beta_deg
//! alpha_min = 0.75
//! alpha_max = 1.25
//! sigma_y_m = 30.0
//!
//! [topology]
//! name = "tree9"             # tree9 | cycle9 | custom (node_count, links, positions_m)
//!
//! [consensus]
//! steps = 1
//!
//! [calibration]
//! gamma = 1.2
//!
//! [experiment]
//! horizon_steps = 1000
//! trials = 200
//! seed = 0
//! ```
//!
//! Optional keys and their defaults: `calibration.mode = "gradient_per_interval"`,
//! `calibration.lambda = 0.98`, `calibration.epsilon = 1e-6`,
//! `calibration.initial_drift = "zero"`, `calibration.gate_threshold` (off),
//! `experiment.variants` (all), `experiment.init = "first_measurement"`,
//! `experiment.initial_cov_diag = [40000, 2500, 40000, 2500]`,
//! `experiment.noise = true`, and the motion initial state shown above.

use std::path::Path;

use serde::Serialize;
use toml::{Table, Value};

use crate::drift_cal::DriftUpdateMode;
use crate::error::{Error, Result};
use crate::simulator::{
    Calibration, InitMode, InitialDrift, Scenario, SensorSpec, TopologySpec, Variant,
};

const SECTIONS: [&str; 6] = ["motion", "sensors", "topology", "consensus", "calibration", "experiment"];

struct Section<'a> {
    name: &'static str,
    table: &'a Table,
}

impl<'a> Section<'a> {
    fn key(&self, k: &str) -> String {
        format!("{}.{k}", self.name)
    }

    fn only(&self, allowed: &[&str]) -> Result<()> {
        match self.table.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::config(self.key(k), "unknown key")),
            None => Ok(()),
        }
    }

    fn opt(&self, k: &str) -> Option<&'a Value> {
        self.table.get(k)
    }

    fn req(&self, k: &str) -> Result<&'a Value> {
        self.opt(k).ok_or_else(|| Error::config(self.key(k), "missing required key"))
    }

    fn f64_of(&self, k: &str, v: &Value) -> Result<f64> {
        match v {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(Error::config(self.key(k), "expected a number")),
        }
    }

    fn f64(&self, k: &str) -> Result<f64> {
        self.f64_of(k, self.req(k)?)
    }

    fn opt_f64(&self, k: &str) -> Result<Option<f64>> {
        self.opt(k).map(|v| self.f64_of(k, v)).transpose()
    }

    fn positive(&self, k: &str) -> Result<f64> {
        let v = self.f64(k)?;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::config(self.key(k), format!("must be positive, got {v}")))
        }
    }

    fn uint_of(&self, k: &str, v: &Value) -> Result<u64> {
        match v {
            Value::Integer(i) if *i >= 0 => Ok(*i as u64),
            _ => Err(Error::config(self.key(k), "expected a non-negative integer")),
        }
    }

    fn count(&self, k: &str) -> Result<usize> {
        let v = self.uint_of(k, self.req(k)?)? as usize;
        if v == 0 {
            return Err(Error::config(self.key(k), "must be at least 1"));
        }
        Ok(v)
    }

    fn str_of(&self, k: &str, v: &'a Value) -> Result<&'a str> {
        v.as_str().ok_or_else(|| Error::config(self.key(k), "expected a string"))
    }

    fn array_f64<const N: usize>(&self, k: &str, v: &Value) -> Result<[f64; N]> {
        let arr = v.as_array().filter(|a| a.len() == N);
        let arr = arr.ok_or_else(|| Error::config(self.key(k), format!("expected an array of {N} numbers")))?;
        let mut out = [0.0; N];
        for (o, v) in out.iter_mut().zip(arr) {
            *o = self.f64_of(k, v)?;
        }
        Ok(out)
    }

    fn opt_array<const N: usize>(&self, k: &str, default: [f64; N]) -> Result<[f64; N]> {
        self.opt(k).map_or(Ok(default), |v| self.array_f64(k, v))
    }

    fn enum_of<T: serde::de::DeserializeOwned>(&self, k: &str, v: &Value) -> Result<T> {
        let s = self.str_of(k, v)?;
        T::deserialize(Value::String(s.to_owned()))
            .map_err(|_| Error::config(self.key(k), format!("unrecognized value `{s}`")))
    }
}

fn sections(doc: &Table) -> Result<Vec<Section<'_>>> {
    if let Some(k) = doc.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
        return Err(Error::config(k.clone(), "unknown section"));
    }
    SECTIONS
        .iter()
        .map(|&name| match doc.get(name) {
            Some(Value::Table(table)) => Ok(Section { name, table }),
            Some(_) => Err(Error::config(name, "expected a section")),
            None => Err(Error::config(name, "missing section")),
        })
        .collect()
}

/// Parses and validates scenario text.
pub fn parse_scenario_str(text: &str) -> Result<Scenario> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_owned()))?;
    let s = sections(&doc)?;
    let [motion, sensors, topology, consensus, calibration, experiment] = &s[..] else {
        unreachable!("one entry per section")
    };

    let topology = parse_topology(topology)?;
    let sensors = parse_sensors(sensors)?;
    let mut sc = Scenario::new(topology, sensors);

    motion.only(&["step_s", "sigma_x_m", "initial_position_m", "initial_velocity_mps"])?;
    sc.motion.step_s = motion.positive("step_s")?;
    sc.motion.sigma_x_m = motion.positive("sigma_x_m")?;
    sc.target_position_m = motion.opt_array("initial_position_m", sc.target_position_m)?;
    sc.target_velocity_mps = motion.opt_array("initial_velocity_mps", sc.target_velocity_mps)?;

    consensus.only(&["steps"])?;
    sc.consensus_steps = consensus.count("steps")?;

    calibration.only(&["mode", "gamma", "lambda", "epsilon", "initial_drift", "gate_threshold"])?;
    sc.calibration = Calibration {
        mode: calibration.opt("mode").map_or(Ok(DriftUpdateMode::GradientPerInterval), |v| calibration.enum_of("mode", v))?,
        gamma: calibration.positive("gamma")?,
        lambda: calibration.opt_f64("lambda")?.unwrap_or(sc.calibration.lambda),
        epsilon: calibration.opt_f64("epsilon")?.unwrap_or(sc.calibration.epsilon),
        initial_drift: calibration
            .opt("initial_drift")
            .map_or(Ok(InitialDrift::Zero), |v| calibration.enum_of("initial_drift", v))?,
    };
    sc.gate_threshold = calibration.opt_f64("gate_threshold")?;

    experiment.only(&["horizon_steps", "trials", "seed", "variants", "init", "initial_cov_diag", "noise"])?;
    sc.horizon = experiment.count("horizon_steps")?;
    sc.trials = experiment.count("trials")?;
    sc.seed = experiment.uint_of("seed", experiment.req("seed")?)?;
    if let Some(v) = experiment.opt("variants") {
        let arr = v.as_array().ok_or_else(|| Error::config("experiment.variants", "expected an array"))?;
        sc.variants = arr
            .iter()
            .map(|v| experiment.enum_of::<Variant>("variants", v))
            .collect::<Result<_>>()?;
    }
    sc.init = experiment.opt("init").map_or(Ok(InitMode::FirstMeasurement), |v| experiment.enum_of("init", v))?;
    sc.initial_cov_diag = experiment.opt_array("initial_cov_diag", sc.initial_cov_diag)?;
    if let Some(v) = experiment.opt("noise") {
        sc.noise = v.as_bool().ok_or_else(|| Error::config("experiment.noise", "expected a boolean"))?;
    }

    sc.validate()?;
    Ok(sc)
}

fn parse_topology(t: &Section<'_>) -> Result<TopologySpec> {
    match t.str_of("name", t.req("name")?)? {
        "tree9" => {
            t.only(&["name"])?;
            Ok(TopologySpec::Tree9)
        }
        "cycle9" => {
            t.only(&["name"])?;
            Ok(TopologySpec::Cycle9)
        }
        "custom" => {
            t.only(&["name", "node_count", "links", "positions_m"])?;
            let node_count = t.count("node_count")?;
            let links = t
                .req("links")?
                .as_array()
                .ok_or_else(|| Error::config("topology.links", "expected an array of [i, j] pairs"))?
                .iter()
                .map(|l| {
                    let pair = l.as_array().filter(|p| p.len() == 2);
                    let pair = pair.ok_or_else(|| Error::config("topology.links", "expected [i, j] pairs"))?;
                    Ok((t.uint_of("links", &pair[0])? as usize, t.uint_of("links", &pair[1])? as usize))
                })
                .collect::<Result<Vec<_>>>()?;
            let positions_m = t
                .req("positions_m")?
                .as_array()
                .ok_or_else(|| Error::config("topology.positions_m", "expected an array of [x, y] pairs"))?
                .iter()
                .map(|p| t.array_f64::<2>("positions_m", p))
                .collect::<Result<Vec<_>>>()?;
            Ok(TopologySpec::Custom { node_count, links, positions_m })
        }
        other => Err(Error::config("topology.name", format!("unknown topology `{other}`"))),
    }
}

fn parse_sensors(s: &Section<'_>) -> Result<SensorSpec> {
    match s.str_of("kind", s.req("kind")?)? {
        "linear" => {
            s.only(&["kind", "alpha_min", "alpha_max", "sigma_y_m"])?;
            Ok(SensorSpec::Linear {
                alpha_min: s.positive("alpha_min")?,
                alpha_max: s.positive("alpha_max")?,
                sigma_y_m: s.positive("sigma_y_m")?,
            })
        }
        "range_bearing" => {
            s.only(&["kind", "sigma_r_m", "sigma_beta_deg"])?;
            Ok(SensorSpec::RangeBearing { sigma_r_m: s.positive("sigma_r_m")?, sigma_beta_deg: s.positive("sigma_beta_deg")? })
        }
        other => Err(Error::config("sensors.kind", format!("unknown sensor kind `{other}`"))),
    }
}

pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_scenario_str(&text)
}

#[derive(Serialize)]
struct MotionOut {
    step_s: f64,
    sigma_x_m: f64,
    initial_position_m: [f64; 2],
    initial_velocity_mps: [f64; 2],
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SensorsOut {
    Linear { alpha_min: f64, alpha_max: f64, sigma_y_m: f64 },
    RangeBearing { sigma_r_m: f64, sigma_beta_deg: f64 },
}

#[derive(Serialize)]
struct TopologyOut {
    name: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    node_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    links: Option<Vec<[usize; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    positions_m: Option<Vec<[f64; 2]>>,
}

#[derive(Serialize)]
struct ConsensusOut {
    steps: usize,
}

#[derive(Serialize)]
struct CalibrationOut {
    mode: DriftUpdateMode,
    gamma: f64,
    lambda: f64,
    epsilon: f64,
    initial_drift: InitialDrift,
    #[serde(skip_serializing_if = "Option::is_none")]
    gate_threshold: Option<f64>,
}

#[derive(Serialize)]
struct ExperimentOut {
    horizon_steps: usize,
    trials: usize,
    seed: u64,
    variants: Vec<Variant>,
    init: InitMode,
    initial_cov_diag: [f64; 4],
    noise: bool,
}

/// Every resolved parameter, laid out as a scenario file.
#[derive(Serialize)]
pub struct ScenarioFile {
    motion: MotionOut,
    sensors: SensorsOut,
    topology: TopologyOut,
    consensus: ConsensusOut,
    calibration: CalibrationOut,
    experiment: ExperimentOut,
}

impl From<&Scenario> for ScenarioFile {
    fn from(sc: &Scenario) -> Self {
        let topology = match &sc.topology {
            TopologySpec::Tree9 => TopologyOut { name: "tree9", node_count: None, links: None, positions_m: None },
            TopologySpec::Cycle9 => TopologyOut { name: "cycle9", node_count: None, links: None, positions_m: None },
            TopologySpec::Custom { node_count, links, positions_m } => TopologyOut {
                name: "custom",
                node_count: Some(*node_count),
                links: Some(links.iter().map(|&(a, b)| [a, b]).collect()),
                positions_m: Some(positions_m.clone()),
            },
        };
        let sensors = match sc.sensors {
            SensorSpec::Linear { alpha_min, alpha_max, sigma_y_m } => SensorsOut::Linear { alpha_min, alpha_max, sigma_y_m },
            SensorSpec::RangeBearing { sigma_r_m, sigma_beta_deg } => SensorsOut::RangeBearing { sigma_r_m, sigma_beta_deg },
        };
        ScenarioFile {
            motion: MotionOut {
                step_s: sc.motion.step_s,
                sigma_x_m: sc.motion.sigma_x_m,
                initial_position_m: sc.target_position_m,
                initial_velocity_mps: sc.target_velocity_mps,
            },
            sensors,
            topology,
            consensus: ConsensusOut { steps: sc.consensus_steps },
            calibration: CalibrationOut {
                mode: sc.calibration.mode,
                gamma: sc.calibration.gamma,
                lambda: sc.calibration.lambda,
                epsilon: sc.calibration.epsilon,
                initial_drift: sc.calibration.initial_drift,
                gate_threshold: sc.gate_threshold,
            },
            experiment: ExperimentOut {
                horizon_steps: sc.horizon,
                trials: sc.trials,
                seed: sc.seed,
                variants: sc.variants.clone(),
                init: sc.init,
                initial_cov_diag: sc.initial_cov_diag,
                noise: sc.noise,
            },
        }
    }
}

/// Serializes a scenario so that [`parse_scenario_str`] reproduces it exactly.
pub fn scenario_to_string(sc: &Scenario) -> String {
    toml::to_string(&ScenarioFile::from(sc)).expect("scenario fields are plain TOML values")
}
