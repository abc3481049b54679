//! Random perturbations on the surface and in the interior of a domain.
//!
//! Directions are Gaussian draws, reflected into the domain's orthant and
//! rescaled to the domain's norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domains::PerturbationDomain;

pub type SampleRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A point with `‖x‖ = ε` in the domain's norm (the zero vector when `n = 0`
/// or `ε = 0`).
pub fn sample_sphere(rng: &mut SampleRng, n: usize, dom: &PerturbationDomain) -> Vec<f64> {
    loop {
        let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for (j, v) in x.iter_mut().enumerate() {
            if dom.orthant.is_constrained(j) {
                *v = v.abs();
            }
        }
        let norm = dom.norm.of(&x);
        if norm > 0.0 {
            let scale = dom.epsilon / norm;
            x.iter_mut().for_each(|v| *v *= scale);
            return x;
        }
        if n == 0 {
            return x;
        }
    }
}

/// A point in the interior: a sphere point shrunk by `u^(1/n)`, `u ~ U(0,1]`.
pub fn sample_ball(rng: &mut SampleRng, n: usize, dom: &PerturbationDomain) -> Vec<f64> {
    let mut x = sample_sphere(rng, n, dom);
    let u: f64 = 1.0 - rng.random::<f64>();
    let r = u.powf(1.0 / n.max(1) as f64);
    x.iter_mut().for_each(|v| *v *= r);
    x
}
