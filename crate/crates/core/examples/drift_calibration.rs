//! Estimating the offset between two nodes from their local beliefs alone.
//!
//! Both nodes observe the same target; each sees it in its own frame. The
//! quadratic consensus loss is rebuilt from fresh noisy beliefs at every step
//! and fed to the gradient and RLS estimators.
//!
//! ```text
//! cargo run --example drift_calibration
//! ```

use std::collections::BTreeMap;

use jttsl::drift_cal::{gradient_step, loss_coefficients, rls_update, stack_neighborhood, DriftEstimator, DriftUpdateMode};
use jttsl::gaussian_info::GaussianInfo;
use jttsl::network::{ConsensusWeights, NodeId};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> jttsl::Result<()> {
    let weights = ConsensusWeights::new(BTreeMap::from([(
        NodeId(1),
        BTreeMap::from([(NodeId(1), 0.5), (NodeId(2), 0.5)]),
    )]))?;
    let truth = DVector::from_vec(vec![350.0, 0.0, -120.0, 0.0]);
    let sigma = 20.0;
    let info = DMatrix::identity(4, 4) / (sigma * sigma);
    let noise = Normal::new(0.0, sigma).expect("valid deviation");
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let start = DVector::zeros(4);
    let mut grad = DriftEstimator::new(start.clone(), 4, 0.98, 200.0, 1e-6, DriftUpdateMode::GradientPerInterval)?;
    let mut rls = DriftEstimator::new(start, 4, 0.98, 1.0, 1e-6, DriftUpdateMode::RlsPerRound)?;

    println!("{:>5} {:>22} {:>22}", "step", "gradient error [m]", "RLS error [m]");
    for step in 1..=200 {
        let target = DVector::from_fn(4, |_, _| noise.sample(&mut rng) * 10.0);
        let local_1 = &target + DVector::from_fn(4, |_, _| noise.sample(&mut rng));
        let local_2 = &target - &truth + DVector::from_fn(4, |_, _| noise.sample(&mut rng));
        let own = GaussianInfo::from_mean(&local_1, info.clone())?;
        let other = GaussianInfo::from_mean(&local_2, info.clone())?;
        let lq = loss_coefficients(&stack_neighborhood(NodeId(1), &own, &[(NodeId(2), &other)], &weights)?)?;
        grad = gradient_step(&grad, &lq)?;
        rls = rls_update(&rls, &lq)?;
        if step % 25 == 0 {
            let err = |e: &DriftEstimator| (&truth - &e.theta_hat).norm();
            println!("{step:>5} {:>22.2} {:>22.2}", err(&grad), err(&rls));
        }
    }
    Ok(())
}
