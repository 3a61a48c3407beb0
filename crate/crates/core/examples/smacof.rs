//! Classical MDS followed by SMACOF on distances between random 3-D points
//! squeezed into two dimensions.

use grae::mds::{classical_mds, normalized_stress, smacof};
use grae::numerics::pairwise_sq_distances;
use grae::rng::{seeded, standard_normal};
use grae::DenseMatrix;

fn main() -> grae::Result<()> {
    let mut rng = seeded(6);
    let x = DenseMatrix::from_fn(100, 3, |_, _| standard_normal(&mut rng));
    let mut d = pairwise_sq_distances(&x)?;
    d.as_mut_slice().iter_mut().for_each(|v| *v = v.sqrt());

    let init = classical_mds(&d, 2)?;
    println!("classical MDS stress {:.5}", normalized_stress(&init.coords, &d));
    let fit = smacof(&d, &init, 300, 1e-9)?;
    for (i, s) in fit.stress_history.iter().enumerate().step_by(10) {
        println!("  iter {i:<4} stress {s:.6}");
    }
    println!("final stress {:.6}", normalized_stress(&fit.embedding.coords, &d));
    Ok(())
}
