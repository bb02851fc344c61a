//! Ground truth and measurement synthesis, trial execution for every estimator
//! variant, and Monte Carlo aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cskf::{self, linearize, synchronous_round, ConsensusMessage, NodeBelief};
use crate::drift_cal::{
    gradient_step, loss_coefficients, rls_update, stack_neighborhood, DriftEstimator, DriftUpdateMode, LossQuadratic,
    DEFAULT_EPSILON, DEFAULT_LAMBDA,
};
use crate::error::{Error, Result};
use crate::models::{wrap_angle, ConstantVelocity, Measurement, MotionModel, SensorModel, TargetState};
use crate::network::{metropolis_weights, true_drifts, ConsensusWeights, DriftVector, NodeId, Topology};

/// Estimator variants compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Consensus filter with online drift calibration.
    Jttsl,
    /// Consensus filter with the true drifts.
    CskfKnownDrift,
    /// One (extended) Kalman filter fed by every sensor, with true geometry.
    Centralized,
    /// Independent per-node (extended) Kalman filters.
    SingleSensor,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Jttsl, Variant::CskfKnownDrift, Variant::Centralized, Variant::SingleSensor];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Jttsl => "jttsl",
            Variant::CskfKnownDrift => "cskf_known_drift",
            Variant::Centralized => "centralized",
            Variant::SingleSensor => "single_sensor",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config("variant", format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologySpec {
    Tree9,
    Cycle9,
    Custom {
        node_count: usize,
        links: Vec<(usize, usize)>,
        positions_m: Vec<[f64; 2]>,
    },
}

impl TopologySpec {
    pub fn build(&self) -> Result<Topology> {
        match self {
            TopologySpec::Tree9 => Ok(Topology::tree9()),
            TopologySpec::Cycle9 => Ok(Topology::cycle9()),
            TopologySpec::Custom { node_count, links, positions_m } => Topology::undirected(
                *node_count,
                links.iter().copied(),
                positions_m.iter().map(|p| Vector2::new(p[0], p[1])).collect(),
            ),
        }
    }
}

/// Sensor family shared by every node; linear gains are drawn per node and trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SensorSpec {
    Linear { alpha_min: f64, alpha_max: f64, sigma_y_m: f64 },
    /// Bearing noise is kept in degrees as written in scenario files.
    RangeBearing { sigma_r_m: f64, sigma_beta_deg: f64 },
}

impl SensorSpec {
    /// Paper experiment parameters: α ∈ [0.75, 1.25], σ_y = 30 m.
    pub fn linear_default() -> Self {
        SensorSpec::Linear { alpha_min: 0.75, alpha_max: 1.25, sigma_y_m: 30.0 }
    }

    /// σ_r = 15 m, σ_β = 0.5°.
    pub fn range_bearing_default() -> Self {
        SensorSpec::RangeBearing { sigma_r_m: 15.0, sigma_beta_deg: 0.5 }
    }

    fn draw(&self, rng: &mut impl Rng) -> SensorModel {
        match *self {
            SensorSpec::Linear { alpha_min, alpha_max, sigma_y_m } => {
                let alpha = if alpha_max > alpha_min { rng.random_range(alpha_min..=alpha_max) } else { alpha_min };
                SensorModel::Linear { alpha, sigma_y_m }
            }
            SensorSpec::RangeBearing { sigma_r_m, sigma_beta_deg } => {
                SensorModel::RangeBearing { sigma_r_m, sigma_beta_rad: sigma_beta_deg.to_radians() }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Position from the first measurement, zero velocity.
    FirstMeasurement,
    /// Exact initial state (for noiseless checks).
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDrift {
    Zero,
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mode: DriftUpdateMode,
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub initial_drift: InitialDrift,
}

/// Full description of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub topology: TopologySpec,
    pub sensors: SensorSpec,
    pub motion: ConstantVelocity,
    pub target_position_m: [f64; 2],
    pub target_velocity_mps: [f64; 2],
    pub consensus_steps: usize,
    pub calibration: Calibration,
    /// Keep local estimates until the drift loss falls below this value.
    pub gate_threshold: Option<f64>,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub variants: Vec<Variant>,
    pub init: InitMode,
    pub initial_cov_diag: [f64; 4],
    /// When false, truth and measurements are generated without noise; the
    /// filters still use the nominal covariances.
    pub noise: bool,
}

impl Scenario {
    /// Experiment defaults: σ_x = 10 m, T = 1 s, L = 1, γ = 1.2 (linear) or 20
    /// (range-bearing), λ = 0.98, gradient calibration once per interval.
    pub fn new(topology: TopologySpec, sensors: SensorSpec) -> Self {
        let gamma = match sensors {
            SensorSpec::Linear { .. } => 1.2,
            SensorSpec::RangeBearing { .. } => 20.0,
        };
        Scenario {
            topology,
            sensors,
            motion: ConstantVelocity { step_s: 1.0, sigma_x_m: 10.0 },
            target_position_m: [1000.0, 1000.0],
            target_velocity_mps: [10.0, 5.0],
            consensus_steps: 1,
            calibration: Calibration {
                mode: DriftUpdateMode::GradientPerInterval,
                gamma,
                lambda: DEFAULT_LAMBDA,
                epsilon: DEFAULT_EPSILON,
                initial_drift: InitialDrift::Zero,
            },
            gate_threshold: None,
            horizon: 1000,
            trials: 200,
            seed: 0,
            variants: Variant::ALL.to_vec(),
            init: InitMode::FirstMeasurement,
            initial_cov_diag: [200.0f64.powi(2), 50.0f64.powi(2), 200.0f64.powi(2), 50.0f64.powi(2)],
            noise: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.topology.build().map_err(|e| Error::config("topology", e.to_string()))?;
        if !t.is_symmetric() {
            return Err(Error::config("topology", "links must be symmetric"));
        }
        if !(self.motion.step_s > 0.0) {
            return Err(Error::config("motion.step_s", "must be positive"));
        }
        if !(self.motion.sigma_x_m > 0.0) {
            return Err(Error::config("motion.sigma_x_m", "must be positive"));
        }
        match self.sensors {
            SensorSpec::Linear { alpha_min, alpha_max, sigma_y_m } => {
                if !(alpha_min > 0.0 && alpha_max >= alpha_min) {
                    return Err(Error::config("sensors.alpha_min", "need 0 < alpha_min <= alpha_max"));
                }
                if !(sigma_y_m > 0.0) {
                    return Err(Error::config("sensors.sigma_y_m", "must be positive"));
                }
            }
            SensorSpec::RangeBearing { sigma_r_m, sigma_beta_deg } => {
                if !(sigma_r_m > 0.0) {
                    return Err(Error::config("sensors.sigma_r_m", "must be positive"));
                }
                if !(sigma_beta_deg > 0.0) {
                    return Err(Error::config("sensors.sigma_beta_deg", "must be positive"));
                }
            }
        }
        if self.consensus_steps == 0 {
            return Err(Error::config("consensus.steps", "must be at least 1"));
        }
        let c = &self.calibration;
        if !(c.gamma > 0.0) {
            return Err(Error::config("calibration.gamma", "must be positive"));
        }
        if !(c.lambda > 0.0 && c.lambda < 1.0) {
            return Err(Error::config("calibration.lambda", "must lie in (0, 1)"));
        }
        if !(c.epsilon >= 0.0) {
            return Err(Error::config("calibration.epsilon", "must be non-negative"));
        }
        if let Some(g) = self.gate_threshold {
            if !(g > 0.0) {
                return Err(Error::config("calibration.gate_threshold", "must be positive"));
            }
        }
        if self.horizon == 0 {
            return Err(Error::config("experiment.horizon_steps", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("experiment.trials", "must be at least 1"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("experiment.variants", "at least one variant required"));
        }
        if self.initial_cov_diag.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config("experiment.initial_cov_diag", "entries must be positive"));
        }
        Ok(())
    }
}

/// Independent random stream of one trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn offset4(p: &Vector2<f64>) -> Vector4<f64> {
    Vector4::new(p[0], 0.0, p[1], 0.0)
}

/// Global target trajectory of `sc.horizon` states.
pub fn generate_truth(sc: &Scenario, rng: &mut impl Rng) -> Vec<TargetState> {
    let [px, py] = sc.target_position_m;
    let [vx, vy] = sc.target_velocity_mps;
    let mut x = TargetState::new(px, vx, py, vy);
    let sigma = sc.motion.sigma_x_m;
    let mut out = Vec::with_capacity(sc.horizon);
    for _ in 0..sc.horizon {
        out.push(x);
        let mut next = sc.motion.transition(&x);
        if sc.noise {
            for k in 0..4 {
                next.0[k] += sigma * gaussian(rng);
            }
        }
        x = next;
    }
    out
}

/// Per-step, per-node measurements, each in the measuring node's own frame.
pub fn generate_measurements(
    truth: &[TargetState],
    topology: &Topology,
    sensors: &[SensorModel],
    noise: bool,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<Measurement>>> {
    truth
        .iter()
        .map(|g| {
            topology
                .positions()
                .iter()
                .zip(sensors)
                .map(|(pos, s)| {
                    let mut y = s.measure(&TargetState(g.0 - offset4(pos)))?;
                    if noise {
                        let r = s.meas_cov();
                        y[0] += r[(0, 0)].sqrt() * gaussian(rng);
                        y[1] += r[(1, 1)].sqrt() * gaussian(rng);
                    }
                    if let SensorModel::RangeBearing { .. } = s {
                        y[1] = wrap_angle(y[1]);
                    }
                    Ok(y)
                })
                .collect()
        })
        .collect()
}

/// Everything a trial needs, shared by all variants.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub stream: u64,
    pub topology: Topology,
    pub sensors: Vec<SensorModel>,
    pub truth: Vec<TargetState>,
    pub measurements: Vec<Vec<Measurement>>,
}

impl TrialData {
    pub fn generate(sc: &Scenario, trial: u64) -> Result<Self> {
        let topology = sc.topology.build()?;
        let mut rng = trial_rng(sc.seed, trial);
        let sensors: Vec<SensorModel> = (0..topology.node_count()).map(|_| sc.sensors.draw(&mut rng)).collect();
        let truth = generate_truth(sc, &mut rng);
        let measurements = generate_measurements(&truth, &topology, &sensors, sc.noise, &mut rng)?;
        Ok(TrialData { stream: trial, topology, sensors, truth, measurements })
    }

    /// Truth at step `t` in node `i`'s frame.
    pub fn local_truth(&self, t: usize, i: NodeId) -> TargetState {
        TargetState(self.truth[t].0 - offset4(&self.topology.positions()[i.index()]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeDriftError {
    pub i: NodeId,
    pub j: NodeId,
    pub xi_err_m: f64,
    pub eta_err_m: f64,
}

impl EdgeDriftError {
    pub fn norm(&self) -> f64 {
        self.xi_err_m.hypot(self.eta_err_m)
    }
}

/// Outcome of one variant on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub variant: Variant,
    pub stream: u64,
    /// `estimates[t][k]`: node `k + 1`'s estimate `x̂_{t|t}` in its own frame.
    pub estimates: Vec<Vec<TargetState>>,
    pub truths: Vec<Vec<TargetState>>,
    /// Drift errors `θ − θ̂` before the first step, per edge.
    pub initial_drift_errors: Vec<EdgeDriftError>,
    /// `drift_errors[t]`: per-edge errors after step `t`. Empty for variants without drifts.
    pub drift_errors: Vec<Vec<EdgeDriftError>>,
}

impl TrialResult {
    pub fn position_error(&self, t: usize, k: usize) -> Vector2<f64> {
        self.estimates[t][k].position() - self.truths[t][k].position()
    }
}

fn drift_errors(truth: &BTreeMap<NodeId, DriftVector>, est: &[DriftVector]) -> Vec<EdgeDriftError> {
    est.iter()
        .flat_map(|d| {
            let i = d.owner();
            d.iter().map(move |(j, th)| {
                let tr = truth[&i].get(j).expect("estimate and truth share neighbors");
                EdgeDriftError { i, j, xi_err_m: tr[0] - th[0], eta_err_m: tr[2] - th[2] }
            })
        })
        .collect()
}

fn initial_local(sc: &Scenario, data: &TrialData, sensor: &SensorModel, y0: &Measurement, truth0: TargetState) -> TargetState {
    match sc.init {
        InitMode::Truth => truth0,
        InitMode::FirstMeasurement => {
            let p = sensor.invert_position(y0);
            let _ = data;
            TargetState::new(p[0], 0.0, p[1], 0.0)
        }
    }
}

/// Distributed filter bank: one consensus filter per node plus drift estimators.
struct NetworkFilter<'a> {
    sc: &'a Scenario,
    weights: ConsensusWeights,
    neighbors: Vec<Vec<NodeId>>,
    beliefs: Vec<NodeBelief>,
    drifts: Vec<DriftVector>,
    estimators: Vec<Option<DriftEstimator>>,
    released: Vec<bool>,
    fuse: bool,
}

impl<'a> NetworkFilter<'a> {
    fn new(sc: &'a Scenario, data: &TrialData, variant: Variant) -> Result<Self> {
        let t = &data.topology;
        let weights = metropolis_weights(t)?;
        let neighbors: Vec<Vec<NodeId>> = t.nodes().map(|i| t.neighbors(i)).collect::<Result<_>>()?;
        let truth_drifts = true_drifts(t);
        let mut beliefs = Vec::new();
        let mut drifts = Vec::new();
        let mut estimators = Vec::new();
        for i in t.nodes() {
            let k = i.index();
            let x0 = initial_local(sc, data, &data.sensors[k], &data.measurements[0][k], data.local_truth(0, i));
            beliefs.push(NodeBelief::from_prior(&x0, sc.initial_cov_diag)?);
            let (drift, est) = match variant {
                Variant::Jttsl => {
                    let mut d = match sc.calibration.initial_drift {
                        InitialDrift::Zero => DriftVector::zeros(i, &neighbors[k]),
                        InitialDrift::Truth => truth_drifts[&i].clone(),
                    };
                    let c = &sc.calibration;
                    let est = if d.is_empty() {
                        None
                    } else {
                        let e = DriftEstimator::new(d.stacked(), 4, c.lambda, c.gamma, c.epsilon, c.mode)?;
                        d.set_stacked(&e.theta_hat)?;
                        Some(e)
                    };
                    (d, est)
                }
                Variant::CskfKnownDrift => (truth_drifts[&i].clone(), None),
                _ => (DriftVector::zeros(i, &[]), None),
            };
            drifts.push(drift);
            estimators.push(est);
        }
        let n = beliefs.len();
        Ok(NetworkFilter {
            sc,
            weights,
            neighbors,
            beliefs,
            drifts,
            estimators,
            released: vec![sc.gate_threshold.is_none(); n],
            fuse: variant != Variant::SingleSensor,
        })
    }

    fn loss(&self, k: usize, round: &[NodeBelief]) -> Result<LossQuadratic> {
        let node = NodeId(k + 1);
        let nbrs: Vec<(NodeId, &crate::gaussian_info::GaussianInfo)> =
            self.neighbors[k].iter().map(|j| (*j, &round[j.index()].corrected)).collect();
        loss_coefficients(&stack_neighborhood(node, &round[k].corrected, &nbrs, &self.weights)?)
    }

    fn step(
        &mut self,
        t: usize,
        sensors: &[SensorModel],
        ys: &[Measurement],
        model: &dyn MotionModel,
        log: &mut Option<&mut dyn Write>,
    ) -> Result<Vec<TargetState>> {
        let time = t as u64;
        let n = self.beliefs.len();
        let mut current: Vec<NodeBelief> = (0..n)
            .map(|k| cskf::correct(&self.beliefs[k], &sensors[k], &ys[k]).map_err(|e| e.at(NodeId(k + 1), time, 0)))
            .collect::<Result<_>>()?;
        let round0 = current.clone();

        let calibrating = |e: &Option<DriftEstimator>| e.as_ref().map(|e| e.mode);
        let mut interval_loss: Vec<Option<LossQuadratic>> = vec![None; n];

        if self.fuse {
            for l in 0..self.sc.consensus_steps {
                if let Some(w) = log.as_mut() {
                    for (k, b) in current.iter().enumerate() {
                        let bytes = ConsensusMessage::new(NodeId(k + 1), time, b).to_bytes()?;
                        w.write_all(&bytes).map_err(|e| Error::Io { path: "message log".into(), message: e.to_string() })?;
                    }
                }
                for k in 0..n {
                    let at = |e: Error| e.at(NodeId(k + 1), time, l as u64);
                    let mode = calibrating(&self.estimators[k]);
                    let needs_interval_loss =
                        l == 0 && (mode == Some(DriftUpdateMode::GradientPerInterval) || !self.released[k]);
                    if mode == Some(DriftUpdateMode::RlsPerRound) || needs_interval_loss {
                        if self.neighbors[k].is_empty() {
                            continue;
                        }
                        let lq = self.loss(k, &current).map_err(at)?;
                        if mode == Some(DriftUpdateMode::RlsPerRound) {
                            let est = self.estimators[k].as_ref().expect("calibrating node");
                            let next = rls_update(est, &lq).map_err(at)?;
                            self.drifts[k].set_stacked(&next.theta_hat)?;
                            self.estimators[k] = Some(next);
                        }
                        if l == 0 {
                            interval_loss[k] = Some(lq);
                        }
                    }
                }
                current = synchronous_round(time, &current, &self.neighbors, &self.weights, &self.drifts)?;
            }
        }

        for k in 0..n {
            if !self.released[k] {
                let threshold = self.sc.gate_threshold.expect("gating enabled");
                let j = match &interval_loss[k] {
                    Some(lq) => lq.eval(&self.drifts[k].stacked()),
                    None => 0.0,
                };
                if j < threshold {
                    self.released[k] = true;
                } else {
                    current[k] = round0[k].clone();
                }
            }
            if calibrating(&self.estimators[k]) == Some(DriftUpdateMode::GradientPerInterval) {
                if let Some(lq) = &interval_loss[k] {
                    let next = gradient_step(self.estimators[k].as_ref().expect("calibrating node"), lq)
                        .map_err(|e| e.at(NodeId(k + 1), time, self.sc.consensus_steps as u64))?;
                    self.drifts[k].set_stacked(&next.theta_hat)?;
                    self.estimators[k] = Some(next);
                }
            }
        }

        let estimates = current.iter().map(|b| b.estimate()).collect::<Result<Vec<_>>>()?;
        self.beliefs = current
            .iter()
            .enumerate()
            .map(|(k, b)| cskf::predict(b, model).map_err(|e| e.at(NodeId(k + 1), time, self.sc.consensus_steps as u64)))
            .collect::<Result<_>>()?;
        Ok(estimates)
    }
}

fn run_network(sc: &Scenario, data: &TrialData, variant: Variant, mut log: Option<&mut dyn Write>) -> Result<TrialResult> {
    let mut filter = NetworkFilter::new(sc, data, variant)?;
    let truth_drifts = true_drifts(&data.topology);
    let track_drift = variant != Variant::SingleSensor;
    let initial_drift_errors = if track_drift { drift_errors(&truth_drifts, &filter.drifts) } else { Vec::new() };
    let mut estimates = Vec::with_capacity(sc.horizon);
    let mut errs = Vec::new();
    for t in 0..sc.horizon {
        estimates.push(filter.step(t, &data.sensors, &data.measurements[t], &sc.motion, &mut log)?);
        if track_drift {
            errs.push(drift_errors(&truth_drifts, &filter.drifts));
        }
    }
    Ok(TrialResult {
        variant,
        stream: data.stream,
        estimates,
        truths: local_truths(sc, data),
        initial_drift_errors,
        drift_errors: errs,
    })
}

fn local_truths(sc: &Scenario, data: &TrialData) -> Vec<Vec<TargetState>> {
    (0..sc.horizon).map(|t| data.topology.nodes().map(|i| data.local_truth(t, i)).collect()).collect()
}

fn run_centralized(sc: &Scenario, data: &TrialData) -> Result<TrialResult> {
    let positions = data.topology.positions();
    let g0 = match sc.init {
        InitMode::Truth => data.truth[0],
        InitMode::FirstMeasurement => {
            let n = positions.len() as f64;
            let sum = positions
                .iter()
                .zip(&data.sensors)
                .zip(&data.measurements[0])
                .fold(Vector2::zeros(), |acc, ((p, s), y)| acc + s.invert_position(y) + p);
            TargetState::new(sum[0] / n, 0.0, sum[1] / n, 0.0)
        }
    };
    let mut belief = NodeBelief::from_prior(&g0, sc.initial_cov_diag)?;
    let mut estimates = Vec::with_capacity(sc.horizon);
    for t in 0..sc.horizon {
        let time = t as u64;
        let x = belief.predicted.mean()?;
        let xg = TargetState::new(x[0], x[1], x[2], x[3]);
        let meas = positions
            .iter()
            .zip(&data.sensors)
            .zip(&data.measurements[t])
            .enumerate()
            .map(|(k, ((p, s), y))| {
                linearize(s, &TargetState(xg.0 - offset4(p)), y).map_err(|e| e.at(NodeId(k + 1), time, 0))
            })
            .collect::<Result<Vec<_>>>()?;
        let corrected = cskf::correct_linearized(&belief, &meas)?;
        let est = corrected.estimate()?;
        estimates.push(positions.iter().map(|p| TargetState(est.0 - offset4(p))).collect());
        belief = cskf::predict(&corrected, &sc.motion)?;
    }
    Ok(TrialResult {
        variant: Variant::Centralized,
        stream: data.stream,
        estimates,
        truths: local_truths(sc, data),
        initial_drift_errors: Vec::new(),
        drift_errors: Vec::new(),
    })
}

/// Runs one variant on pre-generated trial data.
pub fn run_variant(sc: &Scenario, data: &TrialData, variant: Variant) -> Result<TrialResult> {
    match variant {
        Variant::Centralized => run_centralized(sc, data),
        v => run_network(sc, data, v, None),
    }
}

/// Like [`run_variant`], additionally writing every round's messages in the
/// flat [`ConsensusMessage`] layout.
pub fn run_variant_logged(sc: &Scenario, data: &TrialData, variant: Variant, log: &mut dyn Write) -> Result<TrialResult> {
    match variant {
        Variant::Centralized => run_centralized(sc, data),
        v => run_network(sc, data, v, Some(log)),
    }
}

/// Generates trial `trial`'s data from the scenario seed and runs one variant.
pub fn run_trial(sc: &Scenario, variant: Variant, trial: u64) -> Result<TrialResult> {
    run_variant(sc, &TrialData::generate(sc, trial)?, variant)
}

/// Per-step position RMSE for one variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmseSeries {
    pub variant: Variant,
    pub values: Vec<f64>,
}

impl RmseSeries {
    /// Mean over the last `fraction` of the horizon.
    pub fn tail_mean(&self, fraction: f64) -> f64 {
        let n = self.values.len();
        let start = n - ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        self.values[start..].iter().sum::<f64>() / (n - start) as f64
    }
}

/// `rmse_t = sqrt(mean over trials and nodes of ‖position error‖²)`.
pub fn rmse(results: &[TrialResult]) -> Result<RmseSeries> {
    let first = results.first().ok_or(Error::EmptyInput)?;
    let horizon = first.estimates.len();
    if results.iter().any(|r| r.estimates.len() != horizon || r.variant != first.variant) {
        return Err(Error::InvalidInput("trial results differ in horizon or variant".into()));
    }
    let sums = results.iter().map(squared_error_sums).fold(vec![0.0; horizon], |mut acc, s| {
        acc.iter_mut().zip(s).for_each(|(a, v)| *a += v);
        acc
    });
    let count: usize = results.iter().map(|r| r.estimates.first().map_or(0, |e| e.len())).sum();
    Ok(RmseSeries { variant: first.variant, values: sums.iter().map(|s| (s / count as f64).sqrt()).collect() })
}

fn squared_error_sums(r: &TrialResult) -> Vec<f64> {
    (0..r.estimates.len())
        .map(|t| (0..r.estimates[t].len()).map(|k| r.position_error(t, k).norm_squared()).sum())
        .collect()
}

fn max_norm(errs: &[EdgeDriftError]) -> f64 {
    errs.iter().map(EdgeDriftError::norm).fold(0.0, f64::max)
}

/// Median over trials of the largest per-edge drift error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftStats {
    pub initial_median_max_error_m: f64,
    pub median_max_error_m: Vec<f64>,
}

impl DriftStats {
    /// First step at which the median error is below `fraction` of its initial value.
    pub fn first_below(&self, fraction: f64) -> Option<usize> {
        let limit = fraction * self.initial_median_max_error_m;
        self.median_max_error_m.iter().position(|&e| e < limit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub rmse: Vec<RmseSeries>,
    pub drift: Option<DriftStats>,
}

impl MonteCarloSummary {
    pub fn series(&self, v: Variant) -> Option<&RmseSeries> {
        self.rmse.iter().find(|s| s.variant == v)
    }
}

struct TrialReduction {
    sq_err: Vec<Vec<f64>>,
    nodes: usize,
    drift_initial: Option<f64>,
    drift_max: Option<Vec<f64>>,
}

fn reduce(results: &[TrialResult]) -> TrialReduction {
    let jttsl = results.iter().find(|r| r.variant == Variant::Jttsl);
    TrialReduction {
        sq_err: results.iter().map(squared_error_sums).collect(),
        nodes: results[0].estimates.first().map_or(0, |e| e.len()),
        drift_initial: jttsl.map(|r| max_norm(&r.initial_drift_errors)),
        drift_max: jttsl.map(|r| r.drift_errors.iter().map(|e| max_norm(e)).collect()),
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs every trial of the scenario and aggregates RMSE and drift statistics.
pub fn monte_carlo(sc: &Scenario) -> Result<MonteCarloSummary> {
    let order: Vec<usize> = (0..sc.trials).collect();
    monte_carlo_with(sc, &order, |_, _| Ok(()))
}

/// Monte Carlo over trials executed in `order`, calling `observe` with each
/// trial's results. Aggregates are reduced in trial-index order, so they do not
/// depend on `order`.
pub fn monte_carlo_with(
    sc: &Scenario,
    order: &[usize],
    mut observe: impl FnMut(usize, &[TrialResult]) -> Result<()>,
) -> Result<MonteCarloSummary> {
    sc.validate()?;
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..sc.trials).collect::<Vec<_>>() {
        return Err(Error::InvalidInput("trial order must be a permutation of all trials".into()));
    }
    let mut reductions: Vec<Option<TrialReduction>> = (0..sc.trials).map(|_| None).collect();
    for &trial in order {
        let data = TrialData::generate(sc, trial as u64)?;
        let results = sc.variants.iter().map(|&v| run_variant(sc, &data, v)).collect::<Result<Vec<_>>>()?;
        observe(trial, &results)?;
        reductions[trial] = Some(reduce(&results));
    }
    let reductions: Vec<TrialReduction> = reductions.into_iter().map(|r| r.expect("every trial ran")).collect();

    let count = (reductions.len() * reductions[0].nodes) as f64;
    let rmse = sc
        .variants
        .iter()
        .enumerate()
        .map(|(v, &variant)| {
            let mut sums = vec![0.0; sc.horizon];
            for r in &reductions {
                sums.iter_mut().zip(&r.sq_err[v]).for_each(|(a, b)| *a += b);
            }
            RmseSeries { variant, values: sums.iter().map(|s| (s / count).sqrt()).collect() }
        })
        .collect();

    let drift = if sc.variants.contains(&Variant::Jttsl) {
        let mut initial: Vec<f64> = reductions.iter().map(|r| r.drift_initial.unwrap_or(0.0)).collect();
        let median_max_error_m = (0..sc.horizon)
            .map(|t| {
                let mut at: Vec<f64> = reductions.iter().map(|r| r.drift_max.as_ref().map_or(0.0, |d| d[t])).collect();
                median(&mut at)
            })
            .collect();
        Some(DriftStats { initial_median_max_error_m: median(&mut initial), median_max_error_m })
    } else {
        None
    };
    Ok(MonteCarloSummary { rmse, drift })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(sensors: SensorSpec) -> Scenario {
        let mut sc = Scenario::new(TopologySpec::Tree9, sensors);
        sc.horizon = 30;
        sc.trials = 2;
        sc
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("kalman".parse::<Variant>().is_err());
    }

    #[test]
    fn noiseless_truth_is_exact_cv() {
        let mut sc = small(SensorSpec::linear_default());
        sc.noise = false;
        let truth = generate_truth(&sc, &mut trial_rng(1, 0));
        for (t, x) in truth.iter().enumerate() {
            assert!((x.xi() - (1000.0 + 10.0 * t as f64)).abs() < 1e-9);
            assert!((x.eta() - (1000.0 + 5.0 * t as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let sc = small(SensorSpec::linear_default());
        assert_eq!(generate_truth(&sc, &mut trial_rng(9, 3)), generate_truth(&sc, &mut trial_rng(9, 3)));
        assert_ne!(generate_truth(&sc, &mut trial_rng(9, 3)), generate_truth(&sc, &mut trial_rng(9, 4)));
    }

    #[test]
    fn process_noise_sample_covariance() {
        let mut sc = small(SensorSpec::linear_default());
        sc.horizon = 100_001;
        let truth = generate_truth(&sc, &mut trial_rng(5, 0));
        let a = sc.motion.matrix();
        let mut cov = nalgebra::Matrix4::zeros();
        for w in truth.windows(2) {
            let noise = w[1].0 - a * w[0].0;
            cov += noise * noise.transpose();
        }
        cov /= (truth.len() - 1) as f64;
        let q = sc.motion.process_cov();
        for r in 0..4 {
            assert!((cov[(r, r)] - q[(r, r)]).abs() < 0.05 * q[(r, r)], "diag {r}: {}", cov[(r, r)]);
            for c in 0..4 {
                if r != c {
                    assert!(cov[(r, c)].abs() < 0.05 * q[(0, 0)]);
                }
            }
        }
    }

    #[test]
    fn measurement_frame_examples() {
        let truth = vec![TargetState::new(3.0, 0.0, 4.0, 0.0)];
        let lin = SensorModel::Linear { alpha: 1.0, sigma_y_m: 30.0 };
        let topo = Topology::undirected(3, [(1, 2), (2, 3)], vec![
            Vector2::zeros(),
            Vector2::new(3.0, 4.0),
            Vector2::new(3.0, 4.0),
        ])
        .unwrap();
        let ys = generate_measurements(&truth, &topo, &[lin; 3], false, &mut trial_rng(0, 0)).unwrap();
        assert_eq!(ys[0][0], Vector2::new(3.0, 4.0));
        assert_eq!(ys[0][1], Vector2::new(0.0, 0.0));
        assert_eq!(ys[0][1], ys[0][2]);

        let rb = SensorModel::RangeBearing { sigma_r_m: 1.0, sigma_beta_rad: 0.01 };
        assert!(matches!(
            generate_measurements(&truth, &topo, &[rb; 3], false, &mut trial_rng(0, 0)),
            Err(Error::Singularity { .. })
        ));
    }

    #[test]
    fn rmse_examples() {
        let mk = |errs: &[(f64, f64)]| TrialResult {
            variant: Variant::Jttsl,
            stream: 0,
            estimates: vec![errs.iter().map(|&(x, y)| TargetState::new(x, 0.0, y, 0.0)).collect()],
            truths: vec![vec![TargetState::new(0.0, 0.0, 0.0, 0.0); errs.len()]],
            initial_drift_errors: vec![],
            drift_errors: vec![],
        };
        assert_eq!(rmse(&[mk(&[(0.0, 0.0)])]).unwrap().values, vec![0.0]);
        assert_eq!(rmse(&[mk(&[(3.0, 4.0)])]).unwrap().values, vec![5.0]);
        let two = rmse(&[mk(&[(0.0, 0.0)]), mk(&[(3.0, 4.0)])]).unwrap();
        assert!((two.values[0] - (25.0f64 / 2.0).sqrt()).abs() < 1e-15);
        assert!(matches!(rmse(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn scenario_validation() {
        let mut sc = small(SensorSpec::linear_default());
        assert!(sc.validate().is_ok());
        sc.consensus_steps = 0;
        assert!(matches!(sc.validate(), Err(Error::Config { key, .. }) if key == "consensus.steps"));
        let mut sc = small(SensorSpec::linear_default());
        sc.trials = 0;
        assert!(sc.validate().is_err());
        let mut sc = small(SensorSpec::linear_default());
        sc.calibration.lambda = 1.0;
        assert!(sc.validate().is_err());
    }

    #[test]
    fn trials_one_matches_run_trial() {
        let mut sc = small(SensorSpec::linear_default());
        sc.trials = 1;
        let mc = monte_carlo(&sc).unwrap();
        for v in Variant::ALL {
            let direct = rmse(&[run_trial(&sc, v, 0).unwrap()]).unwrap();
            assert_eq!(mc.series(v).unwrap(), &direct);
        }
    }

    #[test]
    fn trial_order_does_not_change_aggregates() {
        let mut sc = small(SensorSpec::range_bearing_default());
        sc.trials = 4;
        let a = monte_carlo(&sc).unwrap();
        let b = monte_carlo_with(&sc, &[2, 0, 3, 1], |_, _| Ok(())).unwrap();
        assert_eq!(a, b);
        assert!(monte_carlo_with(&sc, &[0, 1], |_, _| Ok(())).is_err());
    }

    #[test]
    fn single_node_jttsl_equals_single_sensor() {
        let mut sc = small(SensorSpec::range_bearing_default());
        sc.topology = TopologySpec::Custom { node_count: 1, links: vec![], positions_m: vec![[0.0, 0.0]] };
        sc.consensus_steps = 3;
        let a = run_trial(&sc, Variant::Jttsl, 0).unwrap();
        let b = run_trial(&sc, Variant::SingleSensor, 0).unwrap();
        assert_eq!(a.estimates, b.estimates);
    }

    #[test]
    fn noiseless_exact_init_tracks_truth() {
        for sensors in [SensorSpec::linear_default(), SensorSpec::range_bearing_default()] {
            let mut sc = small(sensors);
            sc.noise = false;
            sc.init = InitMode::Truth;
            sc.calibration.initial_drift = InitialDrift::Truth;
            sc.consensus_steps = 3;
            let data = TrialData::generate(&sc, 0).unwrap();
            for v in Variant::ALL {
                let r = run_variant(&sc, &data, v).unwrap();
                for t in 0..sc.horizon {
                    for k in 0..9 {
                        let err = (r.estimates[t][k].0 - r.truths[t][k].0).amax();
                        assert!(err < 1e-6, "{v} t={t} node={k}: {err}");
                    }
                }
            }
        }
    }

    #[test]
    fn gating_keeps_local_estimates_until_loss_is_small() {
        let mut sc = small(SensorSpec::linear_default());
        sc.gate_threshold = Some(1e-300);
        let data = TrialData::generate(&sc, 0).unwrap();
        let gated = run_variant(&sc, &data, Variant::Jttsl).unwrap();
        let local = run_variant(&sc, &data, Variant::SingleSensor).unwrap();
        // an unreachable threshold keeps every node on its own filter
        assert_eq!(gated.estimates, local.estimates);
        // while calibration still runs
        assert_ne!(gated.drift_errors.last(), Some(&gated.initial_drift_errors));

        sc.gate_threshold = Some(1e300);
        let open = run_variant(&sc, &data, Variant::Jttsl).unwrap();
        sc.gate_threshold = None;
        assert_eq!(open.estimates, run_variant(&sc, &data, Variant::Jttsl).unwrap().estimates);
    }

    #[test]
    fn message_log_has_one_record_per_node_round() {
        let mut sc = small(SensorSpec::linear_default());
        sc.horizon = 3;
        sc.consensus_steps = 2;
        let data = TrialData::generate(&sc, 0).unwrap();
        let mut log = Vec::new();
        let logged = run_variant_logged(&sc, &data, Variant::Jttsl, &mut log).unwrap();
        assert_eq!(log.len(), 3 * 2 * 9 * cskf::MESSAGE_BYTES);
        assert_eq!(logged, run_variant(&sc, &data, Variant::Jttsl).unwrap());
        let last = ConsensusMessage::from_bytes(&log[log.len() - cskf::MESSAGE_BYTES..]).unwrap();
        assert_eq!((last.sender, last.time, last.round), (NodeId(9), 2, 1));
    }
}
