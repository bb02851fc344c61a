//! Gaussian beliefs in moment and information form, their KL divergence, and
//! drift-aware weighted-KL (covariance intersection) fusion.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{log_det, spd_factor, spd_inverse, symmetrize};

/// Tolerance on the sum of fusion weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Gaussian belief parameterized by mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoment {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMoment {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dims(&mean, &cov)?;
        spd_factor(&cov, "covariance")?;
        Ok(GaussianMoment { mean, cov })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Gaussian belief parameterized by information vector `q = Ω x̂` and
/// information matrix `Ω = P⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianInfo {
    info_vec: DVector<f64>,
    info_mat: DMatrix<f64>,
}

impl GaussianInfo {
    pub fn new(info_vec: DVector<f64>, info_mat: DMatrix<f64>) -> Result<Self> {
        check_dims(&info_vec, &info_mat)?;
        spd_factor(&info_mat, "information matrix")?;
        Ok(GaussianInfo { info_vec, info_mat })
    }

    /// Skips the positive-definiteness check. Callers must only pass results of
    /// operations that preserve it (convex combinations, `Ω + CᵀVC`, ...).
    pub(crate) fn from_parts(info_vec: DVector<f64>, info_mat: DMatrix<f64>) -> Self {
        debug_assert_eq!(info_vec.len(), info_mat.nrows());
        GaussianInfo { info_vec, info_mat }
    }

    /// Information form of a belief with the given mean and information matrix.
    pub fn from_mean(mean: &DVector<f64>, info_mat: DMatrix<f64>) -> Result<Self> {
        check_dims(mean, &info_mat)?;
        spd_factor(&info_mat, "information matrix")?;
        Ok(GaussianInfo {
            info_vec: &info_mat * mean,
            info_mat,
        })
    }

    pub fn info_vec(&self) -> &DVector<f64> {
        &self.info_vec
    }

    pub fn info_mat(&self) -> &DMatrix<f64> {
        &self.info_mat
    }

    pub fn dim(&self) -> usize {
        self.info_vec.len()
    }

    /// Point estimate `Ω⁻¹ q`.
    pub fn mean(&self) -> Result<DVector<f64>> {
        Ok(spd_factor(&self.info_mat, "information matrix")?.solve(&self.info_vec))
    }
}

fn check_dims(v: &DVector<f64>, m: &DMatrix<f64>) -> Result<()> {
    if v.is_empty() {
        return Err(Error::EmptyInput);
    }
    if m.nrows() != v.len() || m.ncols() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            found: if m.nrows() != v.len() { m.nrows() } else { m.ncols() },
        });
    }
    Ok(())
}

pub fn from_moment(g: &GaussianMoment) -> Result<GaussianInfo> {
    let info_mat = spd_inverse(&g.cov, "covariance")?;
    let info_vec = &info_mat * &g.mean;
    Ok(GaussianInfo { info_vec, info_mat })
}

pub fn to_moment(g: &GaussianInfo) -> Result<GaussianMoment> {
    let cov = spd_inverse(&g.info_mat, "information matrix")?;
    let mean = &cov * &g.info_vec;
    Ok(GaussianMoment { mean, cov })
}

/// `D_KL(p ‖ q shifted by drift)`: the divergence of `q`, translated into `p`'s
/// coordinates by adding `drift` to its mean, from `p`.
pub fn kl_divergence(p: &GaussianMoment, q: &GaussianMoment, drift: &DVector<f64>) -> Result<f64> {
    let d = p.dim();
    if q.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: q.dim() });
    }
    if drift.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: drift.len() });
    }
    let chol_p = spd_factor(&p.cov, "covariance")?;
    let chol_q = spd_factor(&q.cov, "covariance")?;

    let diff = &p.mean - (&q.mean + drift);
    let mahalanobis = diff.dot(&chol_q.solve(&diff));
    let trace = chol_q.solve(&p.cov).trace();
    let value = 0.5 * (mahalanobis - d as f64 + trace + log_det(&chol_q) - log_det(&chol_p));
    Ok(value)
}

/// One term of a weighted-KL fusion.
#[derive(Debug, Clone, Copy)]
pub struct FusionTerm<'a> {
    pub belief: &'a GaussianInfo,
    pub weight: f64,
    /// Translation from the belief's frame into the fusing node's frame; `None` means zero.
    pub drift: Option<&'a DVector<f64>>,
}

/// Weighted-KL average of Gaussian beliefs:
/// `Ω = Σ wⱼ Ωⱼ`, `q = Σ wⱼ (qⱼ + Ωⱼ θⱼ)`.
pub fn wkl_fuse(terms: &[FusionTerm<'_>]) -> Result<GaussianInfo> {
    let first = terms.first().ok_or(Error::EmptyInput)?;
    let d = first.belief.dim();
    let mut sum = 0.0;
    for t in terms {
        if !(t.weight > 0.0) {
            return Err(Error::NonPositiveWeight { weight: t.weight });
        }
        if t.belief.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: t.belief.dim() });
        }
        if let Some(th) = t.drift {
            if th.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: th.len() });
            }
        }
        sum += t.weight;
    }
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::WeightSum { sum });
    }

    let mut info_mat = DMatrix::zeros(d, d);
    let mut info_vec = DVector::zeros(d);
    for t in terms {
        info_mat += t.weight * &t.belief.info_mat;
        info_vec += t.weight * &t.belief.info_vec;
        if let Some(th) = t.drift {
            info_vec += t.weight * (&t.belief.info_mat * th);
        }
    }
    Ok(GaussianInfo::from_parts(info_vec, symmetrize(info_mat)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn g1(mean: f64, var: f64) -> GaussianMoment {
        GaussianMoment::new(dvector![mean], dmatrix![var]).unwrap()
    }

    fn i1(q: f64, om: f64) -> GaussianInfo {
        GaussianInfo::new(dvector![q], dmatrix![om]).unwrap()
    }

    #[test]
    fn from_moment_examples() {
        let a = from_moment(&g1(0.0, 1.0)).unwrap();
        assert_eq!(a.info_vec()[0], 0.0);
        assert_eq!(a.info_mat()[(0, 0)], 1.0);
        let b = from_moment(&g1(1.0, 0.5)).unwrap();
        assert!((b.info_vec()[0] - 2.0).abs() < 1e-15);
        assert!((b.info_mat()[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn to_moment_examples() {
        let a = to_moment(&i1(0.0, 1.0)).unwrap();
        assert_eq!((a.mean()[0], a.cov()[(0, 0)]), (0.0, 1.0));
        let b = to_moment(&i1(2.0, 2.0)).unwrap();
        assert!((b.mean()[0] - 1.0).abs() < 1e-15 && (b.cov()[(0, 0)] - 0.5).abs() < 1e-15);
        let c = to_moment(&i1(3.0, 3.0)).unwrap();
        assert!((c.mean()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn round_trip_two_dims() {
        let g = GaussianMoment::new(dvector![1.5, -2.0], dmatrix![2.0, 0.3; 0.3, 1.0]).unwrap();
        let back = to_moment(&from_moment(&g).unwrap()).unwrap();
        assert!((back.mean() - g.mean()).amax() < 1e-12);
        assert!((back.cov() - g.cov()).amax() < 1e-12);
    }

    #[test]
    fn invalid_covariances_rejected() {
        assert!(matches!(
            GaussianMoment::new(dvector![0.0], dmatrix![-1.0]),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(matches!(
            GaussianMoment::new(dvector![0.0, 0.0], dmatrix![1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(GaussianInfo::new(dvector![0.0, 0.0], dmatrix![1.0, 1.0; 1.0, 1.0]).is_err());
    }

    #[test]
    fn kl_examples() {
        let z = dvector![0.0];
        let p = g1(0.0, 1.0);
        assert_eq!(kl_divergence(&p, &p, &z).unwrap(), 0.0);
        assert!((kl_divergence(&p, &g1(1.0, 1.0), &z).unwrap() - 0.5).abs() < 1e-15);
        let expected = (1.0 - 2f64.ln()) / 2.0;
        assert!((kl_divergence(&g1(0.0, 2.0), &p, &z).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.15343).abs() < 1e-5);
    }

    #[test]
    fn kl_drift_shifts_the_reference() {
        // q = N(-1, 1) translated by +1 coincides with p.
        let p = g1(0.0, 1.0);
        assert!(kl_divergence(&p, &g1(-1.0, 1.0), &dvector![1.0]).unwrap().abs() < 1e-15);
        assert!(matches!(
            kl_divergence(&p, &p, &dvector![0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fuse_examples() {
        let a = i1(0.0, 1.0);
        let b = i1(3.0, 3.0);
        let single = wkl_fuse(&[FusionTerm { belief: &a, weight: 1.0, drift: None }]).unwrap();
        assert_eq!(single, a);

        let plain = wkl_fuse(&[
            FusionTerm { belief: &a, weight: 0.5, drift: None },
            FusionTerm { belief: &b, weight: 0.5, drift: None },
        ])
        .unwrap();
        assert_eq!(plain.info_mat()[(0, 0)], 2.0);
        assert_eq!(plain.info_vec()[0], 1.5);
        assert!((plain.mean().unwrap()[0] - 0.75).abs() < 1e-15);

        let th = dvector![2.0];
        let drifted = wkl_fuse(&[
            FusionTerm { belief: &a, weight: 0.5, drift: None },
            FusionTerm { belief: &b, weight: 0.5, drift: Some(&th) },
        ])
        .unwrap();
        assert_eq!(drifted.info_vec()[0], 4.5);
        assert!((drifted.mean().unwrap()[0] - 2.25).abs() < 1e-15);
    }

    #[test]
    fn fuse_rejects_bad_weights() {
        let a = i1(0.0, 1.0);
        assert!(matches!(wkl_fuse(&[]), Err(Error::EmptyInput)));
        assert!(matches!(
            wkl_fuse(&[FusionTerm { belief: &a, weight: 0.9, drift: None }]),
            Err(Error::WeightSum { .. })
        ));
        // renormalization is not applied silently, even for tiny deviations
        assert!(wkl_fuse(&[
            FusionTerm { belief: &a, weight: 0.5, drift: None },
            FusionTerm { belief: &a, weight: 0.5 + 1e-10, drift: None },
        ])
        .is_err());
        assert!(matches!(
            wkl_fuse(&[
                FusionTerm { belief: &a, weight: 1.5, drift: None },
                FusionTerm { belief: &a, weight: -0.5, drift: None },
            ]),
            Err(Error::NonPositiveWeight { .. })
        ));
    }
}
