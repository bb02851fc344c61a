//! Per-node consensus Kalman filter: local correction, drift-aware consensus
//! fusion and information-form prediction.
//!
//! A time step at node `i` is `correct` → `consensus_step` × L → `predict`.
//! Consensus rounds are synchronous: round `ℓ + 1` at every node is computed
//! from the round-`ℓ` messages only, see [`synchronous_round`].

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x4, Vector2};

use crate::error::{Error, Result};
use crate::gaussian_info::{wkl_fuse, FusionTerm, GaussianInfo};
use crate::linalg::{spd_factor, symmetrize};
use crate::models::{Measurement, MotionModel, SensorModel, TargetState};
use crate::network::{ConsensusWeights, DriftVector, NodeId};

pub const STATE_DIM: usize = 4;

/// Predicted and corrected information-form beliefs of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeBelief {
    pub predicted: GaussianInfo,
    pub corrected: GaussianInfo,
    pub consensus_index: usize,
}

impl NodeBelief {
    /// Prior belief `x̂_{0|-1}`, `P_{0|-1}`.
    pub fn from_prior(mean: &TargetState, cov_diag: [f64; 4]) -> Result<Self> {
        let info = DMatrix::from_diagonal(&DVector::from_iterator(4, cov_diag.iter().map(|v| 1.0 / v)));
        let predicted = GaussianInfo::from_mean(&to_dvec(mean), info)?;
        Ok(NodeBelief {
            corrected: predicted.clone(),
            predicted,
            consensus_index: 0,
        })
    }

    pub fn estimate(&self) -> Result<TargetState> {
        let m = self.corrected.mean()?;
        Ok(TargetState::new(m[0], m[1], m[2], m[3]))
    }
}

pub(crate) fn to_dvec(x: &TargetState) -> DVector<f64> {
    DVector::from_column_slice(x.0.as_slice())
}

fn jac_to_dmat(c: &Matrix2x4<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 4, c.as_slice())
}

fn mat2_to_dmat(v: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 2, v.as_slice())
}

fn vec2_to_dvec(v: &Vector2<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

/// One linearized measurement: Jacobian `C`, information `V` and residual
/// `y - h(x̂)` (angle-wrapped where needed).
#[derive(Debug, Clone)]
pub struct LinearizedMeasurement {
    pub jacobian: DMatrix<f64>,
    pub meas_info: DMatrix<f64>,
    pub residual: DVector<f64>,
}

/// Information-form correction with any number of linearized measurements,
/// all evaluated at the same predicted mean:
/// `Ω(0) = Ω + Σ CᵀVC`, `q(0) = q + Σ CᵀV (r + C x̂)`.
pub fn correct_linearized(b: &NodeBelief, meas: &[LinearizedMeasurement]) -> Result<NodeBelief> {
    let x_pred = b.predicted.mean()?;
    let mut info_mat = b.predicted.info_mat().clone();
    let mut info_vec = b.predicted.info_vec().clone();
    for m in meas {
        if m.jacobian.ncols() != x_pred.len() {
            return Err(Error::DimensionMismatch { expected: x_pred.len(), found: m.jacobian.ncols() });
        }
        let ctv = m.jacobian.transpose() * &m.meas_info;
        info_mat += &ctv * &m.jacobian;
        info_vec += &ctv * (&m.residual + &m.jacobian * &x_pred);
    }
    Ok(NodeBelief {
        predicted: b.predicted.clone(),
        corrected: GaussianInfo::from_parts(info_vec, symmetrize(info_mat)),
        consensus_index: 0,
    })
}

/// Linearizes `sensor` at `x` (in the sensor's own frame) against measurement `y`.
pub fn linearize(sensor: &SensorModel, x: &TargetState, y: &Measurement) -> Result<LinearizedMeasurement> {
    let c = sensor.jacobian(x)?;
    let h = sensor.measure(x)?;
    Ok(LinearizedMeasurement {
        jacobian: jac_to_dmat(&c),
        meas_info: mat2_to_dmat(&sensor.meas_info()),
        residual: vec2_to_dvec(&sensor.residual(y, &h)),
    })
}

/// Local correction with the node's own measurement.
pub fn correct(b: &NodeBelief, sensor: &SensorModel, y: &Measurement) -> Result<NodeBelief> {
    let m = b.predicted.mean()?;
    let x = TargetState::new(m[0], m[1], m[2], m[3]);
    correct_linearized(b, &[linearize(sensor, &x, y)?])
}

/// Round-`ℓ` payload a node broadcasts to its out-neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMessage {
    pub sender: NodeId,
    pub time: u64,
    pub round: u64,
    pub belief: GaussianInfo,
}

/// Flat message size: 3 integer tags, 4 vector entries, 10 upper-triangular matrix entries.
pub const MESSAGE_BYTES: usize = 8 * (3 + 4 + 10);

impl ConsensusMessage {
    pub fn new(sender: NodeId, time: u64, b: &NodeBelief) -> Self {
        ConsensusMessage {
            sender,
            time,
            round: b.consensus_index as u64,
            belief: b.corrected.clone(),
        }
    }

    /// Little-endian layout: sender, t, ℓ as u64, then `q` and the row-major upper
    /// triangle of `Ω` as f64.
    pub fn to_bytes(&self) -> Result<[u8; MESSAGE_BYTES]> {
        if self.belief.dim() != STATE_DIM {
            return Err(Error::DimensionMismatch { expected: STATE_DIM, found: self.belief.dim() });
        }
        let mut out = [0u8; MESSAGE_BYTES];
        let mut words = out.chunks_exact_mut(8);
        for tag in [self.sender.0 as u64, self.time, self.round] {
            words.next().unwrap().copy_from_slice(&tag.to_le_bytes());
        }
        let q = self.belief.info_vec();
        let om = self.belief.info_mat();
        let upper = (0..STATE_DIM).flat_map(|r| (r..STATE_DIM).map(move |c| (r, c)));
        for v in q.iter().copied().chain(upper.map(|(r, c)| om[(r, c)])) {
            words.next().unwrap().copy_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != MESSAGE_BYTES {
            return Err(Error::InvalidInput(format!(
                "consensus message must be {MESSAGE_BYTES} bytes, got {}",
                bytes.len()
            )));
        }
        let mut words = bytes.chunks_exact(8).map(|w| <[u8; 8]>::try_from(w).unwrap());
        let mut tag = || u64::from_le_bytes(words.next().unwrap());
        let (sender, time, round) = (tag(), tag(), tag());
        let mut floats = words.map(f64::from_le_bytes);
        let q = DVector::from_iterator(STATE_DIM, floats.by_ref().take(STATE_DIM));
        let mut om = DMatrix::zeros(STATE_DIM, STATE_DIM);
        for r in 0..STATE_DIM {
            for c in r..STATE_DIM {
                let v = floats.next().unwrap();
                om[(r, c)] = v;
                om[(c, r)] = v;
            }
        }
        Ok(ConsensusMessage {
            sender: NodeId(sender as usize),
            time,
            round,
            belief: GaussianInfo::new(q, om)?,
        })
    }
}

/// One drift-aware consensus round at `node`:
/// `q(ℓ+1) = Σ π^{i,j} [qⱼ(ℓ) + Ωⱼ(ℓ) θ^{i,j}]`, `Ω(ℓ+1) = Σ π^{i,j} Ωⱼ(ℓ)`.
///
/// `msgs` must hold a round-`ℓ` message from every in-neighbor other than `node`.
pub fn consensus_step(
    node: NodeId,
    time: u64,
    b: &NodeBelief,
    msgs: &[ConsensusMessage],
    weights: &ConsensusWeights,
    drifts: &DriftVector,
) -> Result<NodeBelief> {
    let round = b.consensus_index as u64;
    for m in msgs {
        if m.round != round || m.time != time {
            return Err(Error::RoundMismatch {
                sender: m.sender,
                time: m.time,
                round: m.round,
                expected_time: time,
                expected_round: round,
            });
        }
    }
    let row = weights.row(node)?;
    let mut drift_vecs = Vec::with_capacity(row.len());
    let mut beliefs = Vec::with_capacity(row.len());
    for (&j, &w) in row {
        if j == node {
            beliefs.push((&b.corrected, w));
            drift_vecs.push(None);
            continue;
        }
        let msg = msgs
            .iter()
            .find(|m| m.sender == j)
            .ok_or(Error::MissingNeighbor { node, neighbor: j })?;
        let th = drifts.get(j).ok_or(Error::MissingNeighbor { node, neighbor: j })?;
        beliefs.push((&msg.belief, w));
        drift_vecs.push(Some(DVector::from_column_slice(th.as_slice())));
    }
    let terms: Vec<FusionTerm<'_>> = beliefs
        .iter()
        .zip(&drift_vecs)
        .map(|(&(belief, weight), d)| FusionTerm { belief, weight, drift: d.as_ref() })
        .collect();
    Ok(NodeBelief {
        predicted: b.predicted.clone(),
        corrected: wkl_fuse(&terms)?,
        consensus_index: b.consensus_index + 1,
    })
}

/// `Ω' = W − W A (Ω + AᵀWA)⁻¹ AᵀW`.
pub fn predict_information(info: &DMatrix<f64>, a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let wa = w * a;
    let inner = symmetrize(info + a.transpose() * &wa);
    let chol = spd_factor(&inner, "prediction inner matrix")?;
    let correction = &wa * chol.solve(&wa.transpose());
    Ok(symmetrize(w - correction))
}

/// Information-form prediction from the post-consensus belief.
pub fn predict(b: &NodeBelief, model: &dyn MotionModel) -> Result<NodeBelief> {
    let m = b.corrected.mean()?;
    let x = TargetState::new(m[0], m[1], m[2], m[3]);
    let next = to_dvec(&model.transition(&x));
    let a = model.jacobian(&x);
    let a = DMatrix::from_column_slice(4, 4, a.as_slice());
    let w = model.process_info();
    let w = DMatrix::from_column_slice(4, 4, w.as_slice());
    let info_mat = predict_information(b.corrected.info_mat(), &a, &w)?;
    let info_vec = &info_mat * next;
    let predicted = GaussianInfo::from_parts(info_vec, info_mat);
    Ok(NodeBelief {
        corrected: predicted.clone(),
        predicted,
        consensus_index: 0,
    })
}

/// Runs one synchronous round over all nodes: every node reads the round-`ℓ`
/// beliefs in `current` and the result is written to a fresh buffer.
///
/// `current[k]` and `drifts[k]` belong to node `k + 1`.
pub fn synchronous_round(
    time: u64,
    current: &[NodeBelief],
    neighbors: &[Vec<NodeId>],
    weights: &ConsensusWeights,
    drifts: &[DriftVector],
) -> Result<Vec<NodeBelief>> {
    let msgs: Vec<ConsensusMessage> = current
        .iter()
        .enumerate()
        .map(|(k, b)| ConsensusMessage::new(NodeId(k + 1), time, b))
        .collect();
    current
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let node = NodeId(k + 1);
            let inbox: Vec<ConsensusMessage> = neighbors[k].iter().map(|j| msgs[j.index()].clone()).collect();
            consensus_step(node, time, b, &inbox, weights, &drifts[k])
                .map_err(|e| e.at(node, time, b.consensus_index as u64))
        })
        .collect()
}
