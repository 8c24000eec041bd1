//! Seeded random states and measurements for property checks and sweeps.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::qmatrix::{c, CMatrix, CVector, DensityMatrix, PureState, C64};

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u: f64 = rng.gen::<f64>().max(1e-300);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

pub fn random_pure(rng: &mut ChaCha8Rng, d: usize) -> PureState {
    let mut v = CVector::from_fn(d, |_, _| C64::new(gaussian(rng), gaussian(rng)));
    let n = v.norm();
    v /= c(n);
    PureState::new(v).expect("normalized")
}

/// Random state from the Hilbert-Schmidt-like ensemble `G G† / Tr`, with a
/// random rank in `1..=d`.
pub fn random_density(rng: &mut ChaCha8Rng, d: usize) -> DensityMatrix {
    let rank = rng.gen_range(1..=d);
    random_density_rank(rng, d, rank)
}

pub fn random_density_rank(rng: &mut ChaCha8Rng, d: usize, rank: usize) -> DensityMatrix {
    let g = CMatrix::from_fn(d, rank, |_, _| C64::new(gaussian(rng), gaussian(rng)));
    let m = &g * g.adjoint();
    let t = m.trace().re;
    DensityMatrix::new(m * c(1.0 / t)).expect("valid random state")
}

/// Random full-rank state.
pub fn random_full_rank(rng: &mut ChaCha8Rng, d: usize) -> DensityMatrix {
    random_density_rank(rng, d, d)
}

/// Random probability vector of length `n`.
pub fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}
