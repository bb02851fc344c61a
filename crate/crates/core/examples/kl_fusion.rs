//! Weighted-KL fusion of two beliefs held in different coordinate frames.
//!
//! ```text
//! cargo run --example kl_fusion
//! ```

use jttsl::gaussian_info::{from_moment, kl_divergence, to_moment, wkl_fuse, FusionTerm, GaussianMoment};
use nalgebra::{dmatrix, dvector, DVector};

fn main() -> jttsl::Result<()> {
    // Node A sees the target at (100, 50); node B sits 400 m east of A and sees it at (-300, 50).
    let a = from_moment(&GaussianMoment::new(dvector![100.0, 50.0], dmatrix![400.0, 0.0; 0.0, 900.0])?)?;
    let b = from_moment(&GaussianMoment::new(dvector![-300.0, 50.0], dmatrix![900.0, 0.0; 0.0, 400.0])?)?;
    let offset = dvector![400.0, 0.0];

    for (label, drift) in [("ignoring the offset", DVector::zeros(2)), ("with the offset", offset)] {
        let fused = wkl_fuse(&[
            FusionTerm { belief: &a, weight: 0.5, drift: None },
            FusionTerm { belief: &b, weight: 0.5, drift: Some(&drift) },
        ])?;
        let m = to_moment(&fused)?;
        let loss = 0.5 * kl_divergence(&m, &to_moment(&a)?, &DVector::zeros(2))?
            + 0.5 * kl_divergence(&m, &to_moment(&b)?, &drift)?;
        println!(
            "{label:>20}: mean ({:8.2}, {:6.2})  cov diag ({:6.1}, {:6.1})  weighted KL {loss:10.3}",
            m.mean()[0],
            m.mean()[1],
            m.cov()[(0, 0)],
            m.cov()[(1, 1)],
        );
    }
    Ok(())
}
