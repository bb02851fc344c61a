//! Online drift calibration.
//!
//! At consensus round `ℓ`, node `i` fuses its neighbors' beliefs after
//! translating each one by `θ^{i,j}`. The weighted-KL loss of that fusion,
//!
//! ```text
//! J(Θ) = min_p Σ_j π^{i,j} D_KL(p ‖ p^{i,j})
//! ```
//!
//! is a quadratic `Θᵀ Φ Θ + 2 Θᵀ φ + c` in the stacked drifts `Θ`, with
//!
//! ```text
//! Φ = ½ [Ψ − Ψ E Ω̄⁻¹ Eᵀ Ψ]      Ψ = blkdiag(π^{i,j} Ωⱼ)
//! φ = Φ (x − E x̂ᵢ)               E = [I; …; I],  Ω̄ = Eᵀ Ψ E + π^{i,i} Ωᵢ
//! ```
//!
//! `Φ` is positive definite whenever `π^{i,i} Ωᵢ` is, and the minimizer is
//! `θ^{i,j} = x̂ᵢ − x̂ⱼ`. The estimate is tracked either by forgetting-factor
//! RLS every round or by one projected gradient step per sampling interval.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_info::{kl_divergence, to_moment, wkl_fuse, FusionTerm, GaussianInfo};
use crate::linalg::{log_det, spd_factor, symmetrize};
use crate::network::{ConsensusWeights, NodeId};

pub const DEFAULT_LAMBDA: f64 = 0.98;
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Coefficients of `J(Θ) = Θᵀ Φ Θ + 2 Θᵀ φ + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossQuadratic {
    pub phi_mat: DMatrix<f64>,
    pub phi_vec: DVector<f64>,
    pub const_term: f64,
}

impl LossQuadratic {
    pub fn eval(&self, theta: &DVector<f64>) -> f64 {
        theta.dot(&(&self.phi_mat * theta)) + 2.0 * theta.dot(&self.phi_vec) + self.const_term
    }

    /// `∇J = 2 (Φ Θ + φ)`.
    pub fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        2.0 * (&self.phi_mat * theta + &self.phi_vec)
    }

    /// `argmin J = −Φ⁻¹ φ`.
    pub fn minimizer(&self) -> Result<DVector<f64>> {
        Ok(-spd_factor(&self.phi_mat, "loss curvature")?.solve(&self.phi_vec))
    }
}

/// Neighborhood of node `i` at one consensus round, stacked in ascending neighbor order.
#[derive(Debug, Clone)]
pub struct StackedNeighborhood {
    pub neighbors: Vec<NodeId>,
    /// `blkdiag(π^{i,j} Ωⱼ)`
    pub psi: DMatrix<f64>,
    /// `|N^i| − 1` stacked identity blocks.
    pub e: DMatrix<f64>,
    /// `col(x̂ⱼ)`
    pub x_stack: DVector<f64>,
    /// `π^{i,i} Ωᵢ`
    pub own_weighted_info: DMatrix<f64>,
    pub own_mean: DVector<f64>,
    /// `Ω(ℓ+1) = Eᵀ Ψ E + π^{i,i} Ωᵢ`
    pub fused_info: DMatrix<f64>,
    /// `Σ_{j ∈ N^i} π^{i,j} ln det Ωⱼ`
    weighted_log_det: f64,
}

impl StackedNeighborhood {
    pub fn state_dim(&self) -> usize {
        self.own_mean.len()
    }
}

fn lookup<'a>(node: NodeId, neighbors: &'a [(NodeId, &'a GaussianInfo)], j: NodeId) -> Result<&'a GaussianInfo> {
    neighbors
        .iter()
        .find(|(id, _)| *id == j)
        .map(|(_, b)| *b)
        .ok_or(Error::MissingNeighbor { node, neighbor: j })
}

pub fn stack_neighborhood(
    node: NodeId,
    own: &GaussianInfo,
    neighbors: &[(NodeId, &GaussianInfo)],
    weights: &ConsensusWeights,
) -> Result<StackedNeighborhood> {
    let row = weights.row(node)?;
    let d = own.dim();
    let ids: Vec<NodeId> = row.keys().copied().filter(|&j| j != node).collect();
    let m = ids.len();

    let own_chol = spd_factor(own.info_mat(), "information matrix")?;
    let own_w = row[&node];
    let mut weighted_log_det = own_w * log_det(&own_chol);

    let mut psi = DMatrix::zeros(d * m, d * m);
    let mut e = DMatrix::zeros(d * m, d);
    let mut x_stack = DVector::zeros(d * m);
    let mut fused_info = own_w * own.info_mat();
    for (k, &j) in ids.iter().enumerate() {
        let b = lookup(node, neighbors, j)?;
        if b.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: b.dim() });
        }
        let chol = spd_factor(b.info_mat(), "information matrix")?;
        let w = row[&j];
        weighted_log_det += w * log_det(&chol);
        let block = w * b.info_mat();
        fused_info += &block;
        psi.view_mut((k * d, k * d), (d, d)).copy_from(&block);
        e.view_mut((k * d, 0), (d, d)).fill_with_identity();
        x_stack.rows_mut(k * d, d).copy_from(&chol.solve(b.info_vec()));
    }

    Ok(StackedNeighborhood {
        neighbors: ids,
        psi,
        e,
        x_stack,
        own_weighted_info: own_w * own.info_mat(),
        own_mean: own_chol.solve(own.info_vec()),
        fused_info: symmetrize(fused_info),
        weighted_log_det,
    })
}

pub fn loss_coefficients(s: &StackedNeighborhood) -> Result<LossQuadratic> {
    let fused = spd_factor(&s.fused_info, "fused information matrix")?;
    let psi_e = &s.psi * &s.e;
    // Ψ E Ω̄⁻¹ Eᵀ Ψ
    let coupling = &psi_e * fused.solve(&psi_e.transpose());
    let phi_mat = symmetrize((&s.psi - coupling) * 0.5);
    let offset = &s.x_stack - &s.e * &s.own_mean;
    let phi_vec = &phi_mat * &offset;
    // Θ-independent part of the KL sum: ½ [ln det Ω̄ − Σ π^{i,j} ln det Ωⱼ]
    let entropy_gap = 0.5 * (log_det(&fused) - s.weighted_log_det);
    let const_term = offset.dot(&phi_vec) + entropy_gap;
    Ok(LossQuadratic { phi_mat, phi_vec, const_term })
}

/// Weighted-KL loss evaluated from its definition: fuse the translated beliefs,
/// then sum the weighted divergences of each translated belief from the fusion.
pub fn loss_eval(
    node: NodeId,
    own: &GaussianInfo,
    neighbors: &[(NodeId, &GaussianInfo)],
    weights: &ConsensusWeights,
    theta: &DVector<f64>,
) -> Result<f64> {
    let row = weights.row(node)?;
    let d = own.dim();
    let ids: Vec<NodeId> = row.keys().copied().filter(|&j| j != node).collect();
    if theta.len() != d * ids.len() {
        return Err(Error::DimensionMismatch { expected: d * ids.len(), found: theta.len() });
    }
    let drifts: Vec<DVector<f64>> = (0..ids.len()).map(|k| theta.rows(k * d, d).into_owned()).collect();

    let mut terms = vec![FusionTerm { belief: own, weight: row[&node], drift: None }];
    for (k, &j) in ids.iter().enumerate() {
        terms.push(FusionTerm { belief: lookup(node, neighbors, j)?, weight: row[&j], drift: Some(&drifts[k]) });
    }
    let fused = to_moment(&wkl_fuse(&terms)?)?;

    let zero = DVector::zeros(d);
    let mut total = row[&node] * kl_divergence(&fused, &to_moment(own)?, &zero)?;
    for (k, &j) in ids.iter().enumerate() {
        let b = to_moment(lookup(node, neighbors, j)?)?;
        total += row[&j] * kl_divergence(&fused, &b, &drifts[k])?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftUpdateMode {
    /// Forgetting-factor RLS at every consensus round, applied before that round's fusion.
    RlsPerRound,
    /// One gradient step per sampling interval, after the last consensus round.
    GradientPerInterval,
    /// No updates; estimates stay at their initial values.
    Frozen,
}

/// Per-node drift estimate and its accumulated curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftEstimator {
    pub theta_hat: DVector<f64>,
    pub phi_bar: DMatrix<f64>,
    pub lambda: f64,
    pub gamma: f64,
    pub mode: DriftUpdateMode,
    state_dim: usize,
}

impl DriftEstimator {
    /// `Φ̄(0) = ε I`.
    pub fn new(
        theta0: DVector<f64>,
        state_dim: usize,
        lambda: f64,
        gamma: f64,
        epsilon: f64,
        mode: DriftUpdateMode,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidInput(format!("forgetting factor must lie in (0, 1), got {lambda}")));
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidInput(format!("stepsize must be positive, got {gamma}")));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidInput(format!("regularization must be non-negative, got {epsilon}")));
        }
        if state_dim == 0 || !theta0.len().is_multiple_of(state_dim) {
            return Err(Error::DimensionMismatch { expected: state_dim, found: theta0.len() });
        }
        let n = theta0.len();
        let mut est = DriftEstimator {
            theta_hat: theta0,
            phi_bar: DMatrix::identity(n, n) * epsilon,
            lambda,
            gamma,
            mode,
            state_dim,
        };
        est.project();
        Ok(est)
    }

    /// Drifts are pure translations: zero the velocity components of 4-D states.
    fn project(&mut self) {
        if self.state_dim == 4 {
            for k in (0..self.theta_hat.len()).step_by(4) {
                self.theta_hat[k + 1] = 0.0;
                self.theta_hat[k + 3] = 0.0;
            }
        }
    }

    fn check(&self, lq: &LossQuadratic) -> Result<()> {
        let n = self.theta_hat.len();
        if lq.phi_vec.len() != n || lq.phi_mat.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, found: lq.phi_vec.len() });
        }
        Ok(())
    }
}

/// `Φ̄ ← λ Φ̄ + Φ`, `Θ̂ ← Θ̂ − Φ̄⁻¹ (φ + Φ Θ̂)`.
pub fn rls_update(e: &DriftEstimator, lq: &LossQuadratic) -> Result<DriftEstimator> {
    e.check(lq)?;
    let phi_bar = symmetrize(e.lambda * &e.phi_bar + &lq.phi_mat);
    let rhs = &lq.phi_vec + &lq.phi_mat * &e.theta_hat;
    let step = spd_factor(&phi_bar, "accumulated loss curvature")?.solve(&rhs);
    let mut out = DriftEstimator {
        theta_hat: &e.theta_hat - step,
        phi_bar,
        ..e.clone()
    };
    out.project();
    Ok(out)
}

/// `Θ̂ ← Θ̂ − γ · 2 (Φ Θ̂ + φ)`, projected onto pure translations.
pub fn gradient_step(e: &DriftEstimator, lq: &LossQuadratic) -> Result<DriftEstimator> {
    e.check(lq)?;
    let mut out = DriftEstimator {
        theta_hat: &e.theta_hat - e.gamma * lq.gradient(&e.theta_hat),
        ..e.clone()
    };
    out.project();
    Ok(out)
}
