//! Recovers a random similarity transform between two point clouds.

use grae::rng::{random_orthogonal, seeded, standard_normal};
use grae::stitch::procrustes;
use grae::DenseMatrix;

fn main() -> grae::Result<()> {
    let mut rng = seeded(5);
    let a = DenseMatrix::from_fn(50, 3, |_, _| standard_normal(&mut rng));
    let r = random_orthogonal(3, &mut rng);
    let mut b = a.matmul(&r)?;
    b.scale_in_place(2.5);
    for i in 0..b.rows() {
        for (v, t) in b.row_mut(i).iter_mut().zip([1.0, -2.0, 0.5]) {
            *v += t;
        }
    }
    let tf = procrustes(&a, &b)?;
    println!("scale {:.6}", tf.scale);
    println!("translation {:.6?}", tf.translation);
    println!("residual {:.2e}", tf.residual(&a, &b)?);
    Ok(())
}
