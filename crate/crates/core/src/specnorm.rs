//! Spectral norms `‖R A‖₂` of row-masked operators.
//!
//! The matrix-free path runs power iteration on `Aᵀ R A` (note `RᵀR = R` for
//! a 0/1 diagonal), using only forward and adjoint applications. Any unit
//! `v` gives `‖R A v‖ ≤ σ`, so the reported value, the best such estimate
//! over the span of the iterates, never exceeds the true norm except by
//! rounding.
//!
//! The dense path is an oracle: cyclic Jacobi on the smaller Gram matrix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::linops::{check_materialize, dot, norm2, DenseOperator, LinearMap};
use crate::relu::ReluMask;

pub const DEFAULT_SEED: u64 = 0x5EED;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIterConfig {
    pub iterations: usize,
    /// Extra iterations run after `iterations`.
    pub polish: usize,
    pub seed: u64,
    /// Stop once successive estimates differ by at most `rel_tol · σ`.
    pub rel_tol: Option<f64>,
}

impl Default for PowerIterConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            polish: 20,
            seed: DEFAULT_SEED,
            rel_tol: None,
        }
    }
}

impl PowerIterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("power iteration needs at least one iteration"));
        }
        if let Some(t) = self.rel_tol {
            if !(t >= 0.0) {
                return Err(invalid(format!("rel_tol must be non-negative, got {t}")));
            }
        }
        Ok(())
    }
}

/// Seeded start vector, uniform on the unit sphere.
pub fn start_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let nv = norm2(&v);
        if nv > 0.0 {
            v.iter_mut().for_each(|x| *x /= nv);
            return v;
        }
    }
}

/// Power-iteration estimate of `‖R A‖₂`.
///
/// The iterates `v, M v, M² v, …` of `M = Aᵀ R A` are kept as an orthonormal
/// basis (Lanczos with full reorthogonalisation) and the estimate is the
/// largest Rayleigh quotient over their span. That is never below the
/// quotient of any single power iterate and still never above `σ²`.
pub fn masked_spectral_norm(
    op: &(impl LinearMap + ?Sized),
    mask: &ReluMask,
    cfg: &PowerIterConfig,
) -> Result<f64> {
    cfg.validate()?;
    check_len("mask", mask.len(), op.rows())?;
    let n = op.cols();
    if mask.is_zero() || n == 0 {
        return Ok(0.0);
    }
    let steps = (cfg.iterations + cfg.polish).min(n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alpha: Vec<f64> = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut v = start_vector(n, cfg.seed);
    let mut u = vec![0.0; op.rows()];
    let mut prev = f64::NAN;
    for _ in 0..steps {
        op.apply_into(&v, &mut u);
        mask.apply_in_place(&mut u);
        let mut w = vec![0.0; n];
        op.apply_adjoint_into(&u, &mut w);
        alpha.push(dot(&v, &w));
        basis.push(v);
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
        }
        let b = norm2(&w);
        if let Some(tol) = cfg.rel_tol {
            let theta = largest_tridiagonal_eigenvalue(&alpha, &beta);
            if (theta - prev).abs() <= tol * theta {
                break;
            }
            prev = theta;
        }
        let scale = alpha.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        if !(b > 1e-14 * scale) || !b.is_finite() {
            break;
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        v = w;
    }
    beta.truncate(alpha.len() - 1);
    let theta = largest_tridiagonal_eigenvalue(&alpha, &beta);
    Ok(theta.max(0.0).sqrt())
}

/// Largest eigenvalue of the symmetric tridiagonal matrix with diagonal `a`
/// and off-diagonal `b`, by Sturm-sequence bisection. Returns the lower end
/// of the final bracket.
pub fn largest_tridiagonal_eigenvalue(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len();
    if k == 0 {
        return 0.0;
    }
    debug_assert_eq!(b.len(), k - 1);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..k {
        let r = if i > 0 { b[i - 1].abs() } else { 0.0 } + if i + 1 < k { b[i].abs() } else { 0.0 };
        lo = lo.min(a[i] - r);
        hi = hi.max(a[i] + r);
    }
    // eigenvalues strictly below x
    let below = |x: f64| -> usize {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..k {
            let off = if i > 0 { b[i - 1] * b[i - 1] / d } else { 0.0 };
            d = a[i] - x - off;
            if d == 0.0 {
                d = -f64::EPSILON * (x.abs() + f64::MIN_POSITIVE);
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid) == k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Largest singular value of the masked dense matrix, via Jacobi on the
/// smaller of `M Mᵀ` and `Mᵀ M`.
pub fn dense_spectral_norm(op: &DenseOperator, mask: &ReluMask, cap: usize) -> Result<f64> {
    check_len("mask", mask.len(), op.rows())?;
    check_materialize(op.rows(), op.cols(), cap)?;
    let active: Vec<&[f64]> = (0..op.rows())
        .filter(|&i| mask.bits()[i])
        .map(|i| op.row(i))
        .collect();
    let k = active.len();
    let n = op.cols();
    if k == 0 || n == 0 {
        return Ok(0.0);
    }
    let gram = if k <= n {
        let mut g = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..=i {
                let v: f64 = active[i].iter().zip(active[j]).map(|(a, b)| a * b).sum();
                g[i * k + j] = v;
                g[j * k + i] = v;
            }
        }
        (g, k)
    } else {
        let mut g = vec![0.0; n * n];
        for row in &active {
            for i in 0..n {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in 0..n {
                    g[i * n + j] += ri * row[j];
                }
            }
        }
        (g, n)
    };
    let eig = symmetric_eigenvalues(gram.0, gram.1);
    let lambda = eig.into_iter().fold(0.0, f64::max);
    Ok(lambda.max(0.0).sqrt())
}

/// Eigenvalues of a symmetric `n × n` row-major matrix by cyclic Jacobi
/// rotations.
pub fn symmetric_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    let frob: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if frob == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * frob {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}
