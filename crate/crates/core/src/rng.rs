//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`seeded`], a ChaCha8 stream
//! (`rand_chacha::ChaCha8Rng::seed_from_u64`). Uniform `f64` values come from
//! rand's standard 53-bit conversion and Gaussian values from
//! `rand_distr::StandardNormal`, so outputs are reproducible bit for bit
//! given the same seed and crate versions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::matrix::{dot, DenseMatrix};

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a purpose tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn standard_normal(rng: &mut SeededRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Haar-distributed random orthogonal `d×d` matrix (Gram–Schmidt on a
/// Gaussian matrix).
pub fn random_orthogonal(d: usize, rng: &mut SeededRng) -> DenseMatrix {
    loop {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut ok = true;
        for _ in 0..d {
            let mut v: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
            for _ in 0..2 {
                for c in &cols {
                    let p = dot(&v, c);
                    v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
        if ok {
            return DenseMatrix::from_fn(d, d, |i, j| cols[j][i]);
        }
    }
}
