//! Test-only oracles, written independently of the library kernels.
#![allow(dead_code)]

use lipcert::linops::{Conv2dOperator, DenseOperator, TensorShape};
use lipcert::sampling::{rng, SampleRng};
use lipcert::{Norm, PerturbationDomain};
use rand::Rng;

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

/// Dense matrix of a convolution built straight from the definition
/// `y[o, i, j] = Σ k[o, c, u, v] · x[c, i·s + u − p, j·s + v − p]`.
pub fn conv_matrix_direct(conv: &Conv2dOperator) -> Vec<Vec<f64>> {
    let (cin, h, w) = conv.in_shape().chw().unwrap();
    let (cout, ho, wo) = conv.out_shape().chw().unwrap();
    let (kh, kw) = conv.kernel_size();
    let (sh, sw) = conv.stride();
    let (ph, pw) = conv.padding();
    let k = conv.kernel();
    let mut rows = vec![vec![0.0; cin * h * w]; cout * ho * wo];
    for o in 0..cout {
        for i in 0..ho {
            for j in 0..wo {
                let row = &mut rows[(o * ho + i) * wo + j];
                for c in 0..cin {
                    for u in 0..kh {
                        for v in 0..kw {
                            let y = (i * sh + u) as isize - ph as isize;
                            let x = (j * sw + v) as isize - pw as isize;
                            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                                continue;
                            }
                            row[(c * h + y as usize) * w + x as usize] +=
                                k[((o * cin + c) * kh + u) * kw + v];
                        }
                    }
                }
            }
        }
    }
    rows
}

pub fn matvec(rows: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    rows.iter()
        .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn gaussian_vec(r: &mut SampleRng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, r);
            z
        })
        .collect()
}

pub fn random_dense(r: &mut SampleRng, m: usize, n: usize) -> DenseOperator {
    DenseOperator::new(m, n, gaussian_vec(r, m * n)).unwrap()
}

/// Random convolution; `cfg = (cin, h, w, cout, k, stride, pad)`.
pub fn random_conv(r: &mut SampleRng, cfg: (usize, usize, usize, usize, usize, usize, usize)) -> Conv2dOperator {
    let (cin, h, w, cout, k, s, p) = cfg;
    Conv2dOperator::new(
        TensorShape::new(vec![cin, h, w]).unwrap(),
        cout,
        (k, k),
        (s, s),
        (p, p),
        gaussian_vec(r, cout * cin * k * k),
    )
    .unwrap()
}

/// A convolution configuration with a valid output, from the given stream.
pub fn random_conv_config(r: &mut SampleRng) -> (usize, usize, usize, usize, usize, usize, usize) {
    loop {
        let k = r.random_range(1..=5);
        let s = r.random_range(1..=2);
        let p = r.random_range(0..=2);
        let h = r.random_range(1..=9);
        let w = r.random_range(1..=9);
        if h + 2 * p >= k && w + 2 * p >= k {
            return (r.random_range(1..=3), h, w, r.random_range(1..=3), k, s, p);
        }
    }
}

pub fn random_domain(r: &mut SampleRng) -> PerturbationDomain {
    let norm = Norm::ALL[r.random_range(0..3)];
    let eps = 10f64.powf(r.random_range(-2.0..1.0));
    PerturbationDomain::new(norm, eps, r.random_bool(0.5)).unwrap()
}

pub fn stream(seed: u64) -> SampleRng {
    rng(seed)
}

/// Relative agreement `|a − b| ≤ tol · max(1, |a|, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
