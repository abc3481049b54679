//! Brute-force cross-checks for small layers.
//!
//! Nothing here feeds a certified bound. The checks compare the matrix-free
//! paths against dense materialisation, sampled ratios against every upper
//! bound, and the bounding-region mask against enumeration of all masks.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    analyze_layer, relu_ratio, rmax_bound_enumerated, BoundConfig, RmaxMode, RmaxOptions,
};
use crate::domains::{bounding_vector, Norm, Orthant, PerturbationDomain};
use crate::error::{check_len, invalid, Result};
use crate::linops::{DenseOperator, LinearMap};
use crate::relu::{apply_relu, mask_of, ReluMask};
use crate::sampling::{self, sample_ball, sample_sphere, SampleRng};
use crate::specnorm::{dense_spectral_norm, masked_spectral_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// `‖A‖`, dense against matrix-free.
    NaiveNorm,
    /// `‖R̄ A‖`, dense against matrix-free.
    RbarNorm,
    LowerVsNaive,
    LowerVsRbar,
    LowerVsNested,
    /// `‖R̄ A‖` against the maximum over all `2^m` masks.
    RbarVsExhaustive,
    /// Sampled reachable-mask maximum against `‖R̄ A‖`.
    SampledRmaxVsRbar,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantity::NaiveNorm => "naive_norm",
            Quantity::RbarNorm => "rbar_norm",
            Quantity::LowerVsNaive => "lower_vs_naive",
            Quantity::LowerVsRbar => "lower_vs_rbar",
            Quantity::LowerVsNested => "lower_vs_nested",
            Quantity::RbarVsExhaustive => "rbar_vs_exhaustive",
            Quantity::SampledRmaxVsRbar => "sampled_rmax_vs_rbar",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    OracleLeqCertified,
    OracleEqCertified,
    /// The certified value must not exceed an over-approximating oracle.
    CertifiedLeqOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub quantity: Quantity,
    pub oracle_value: f64,
    pub certified_value: f64,
    pub relation: Relation,
    /// Relative tolerance, scaled by `max(1, |value|)`.
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn new(
        quantity: Quantity,
        oracle_value: f64,
        certified_value: f64,
        relation: Relation,
        tolerance: f64,
    ) -> Self {
        let (o, c) = (oracle_value, certified_value);
        let slack = tolerance * o.abs().max(c.abs()).max(1.0);
        let pass = o.is_finite()
            && c.is_finite()
            && match relation {
                Relation::OracleLeqCertified => o <= c + slack,
                Relation::OracleEqCertified => (o - c).abs() <= slack,
                Relation::CertifiedLeqOracle => c <= o + slack,
            };
        Self {
            quantity,
            oracle_value,
            certified_value,
            relation,
            tolerance,
            pass,
        }
    }
}

/// `max ‖relu(A x + b) − relu(b)‖ / ‖x‖₂` over `n` draws, half on the
/// boundary of the domain and half inside it.
pub fn sampled_local_lipschitz(
    op: &(impl LinearMap + ?Sized),
    bias: &[f64],
    dom: &PerturbationDomain,
    n: usize,
    seed: u64,
) -> Result<f64> {
    check_len("bias", bias.len(), op.rows())?;
    dom.check_dim(op.cols())?;
    if !(dom.epsilon > 0.0) {
        return Err(invalid("sampled Lipschitz estimate needs ε > 0"));
    }
    if n == 0 {
        return Err(invalid("sampled Lipschitz estimate needs at least one sample"));
    }
    let base = apply_relu(bias);
    let mut rng = sampling::rng(seed);
    let mut buf = vec![0.0; op.rows()];
    let mut best = 0.0f64;
    for k in 0..n {
        let x = if k % 2 == 0 {
            sample_sphere(&mut rng, op.cols(), dom)
        } else {
            sample_ball(&mut rng, op.cols(), dom)
        };
        best = best.max(relu_ratio(op, bias, &base, &x, &mut buf));
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub bounds: BoundConfig,
    pub samples: usize,
    pub seed: u64,
    pub rmax: RmaxOptions,
    /// Relative tolerance for dense against matrix-free norms.
    pub norm_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            bounds: BoundConfig::default(),
            samples: 2_000,
            seed: 3,
            rmax: RmaxOptions {
                exhaustive_dim_cap: 10,
                samples: 500,
                ..RmaxOptions::default()
            },
            norm_tol: 1e-6,
        }
    }
}

/// Runs every check that fits under the configured caps.
///
/// The exhaustive comparison is skipped when `m` exceeds
/// `cfg.rmax.exhaustive_dim_cap`; a dense operator beyond the materialisation
/// cap is a capacity error.
pub fn verify_instance(
    op: &(impl LinearMap + ?Sized),
    bias: &[f64],
    dom: &PerturbationDomain,
    cfg: &OracleConfig,
) -> Result<Vec<OracleReport>> {
    let dense = op.materialize(cfg.bounds.materialize_cap)?;
    let cap = cfg.bounds.materialize_cap;
    let m = dense.rows();
    let slack_tol = cfg.bounds.spectral_slack.max(cfg.norm_tol);
    let mut reports = Vec::with_capacity(7);

    let full = ReluMask::all(m);
    let rbar_mask = mask_of(&bounding_vector(op, bias, dom)?.ybar);
    for (q, mask) in [(Quantity::NaiveNorm, &full), (Quantity::RbarNorm, &rbar_mask)] {
        let exact = dense_spectral_norm(&dense, mask, cap)?;
        let iter = masked_spectral_norm(op, mask, &cfg.bounds.power)?;
        reports.push(OracleReport::new(q, exact, iter, Relation::OracleEqCertified, cfg.norm_tol));
    }

    let report = analyze_layer(op, bias, dom, &cfg.bounds)?;
    if dom.epsilon > 0.0 {
        let lower = sampled_local_lipschitz(op, bias, dom, cfg.samples.max(1), cfg.seed)?
            .max(report.lower);
        for (q, upper) in [
            (Quantity::LowerVsNaive, report.naive),
            (Quantity::LowerVsRbar, report.rbar),
            (Quantity::LowerVsNested, report.nested),
        ] {
            reports.push(OracleReport::new(q, lower, upper, Relation::OracleLeqCertified, 1e-9));
        }
    }

    if m <= cfg.rmax.exhaustive_dim_cap {
        let opts = RmaxOptions {
            mode: Some(RmaxMode::Exhaustive),
            ..cfg.rmax
        };
        let exhaustive = rmax_bound_enumerated(&dense, bias, dom, &opts)?;
        reports.push(OracleReport::new(
            Quantity::RbarVsExhaustive,
            exhaustive.value,
            report.rbar,
            Relation::CertifiedLeqOracle,
            slack_tol,
        ));
    }
    let opts = RmaxOptions {
        mode: Some(RmaxMode::Sampled),
        ..cfg.rmax
    };
    let sampled = rmax_bound_enumerated(&dense, bias, dom, &opts)?;
    reports.push(OracleReport::new(
        Quantity::SampledRmaxVsRbar,
        sampled.value,
        report.rbar,
        Relation::OracleLeqCertified,
        1e-9,
    ));
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Random,
    /// Several rows repeated verbatim, so breakpoints coincide.
    DuplicateRows,
    /// Some bias entries of magnitude `1e-13`.
    NearZeroBias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub index: usize,
    pub family: Family,
    pub op: DenseOperator,
    pub bias: Vec<f64>,
    pub domain: PerturbationDomain,
}

const BIAS_SCALES: [f64; 3] = [0.01, 1.0, 100.0];

fn gaussian(rng: &mut SampleRng) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

/// Instance `index` of the seeded family sweep. Each instance has its own
/// stream, so instances can be generated independently.
pub fn generate_instance(seed: u64, index: usize) -> Instance {
    let mut rng = sampling::rng(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let m = rng.random_range(1..=16);
    let n = rng.random_range(1..=16);
    let norm = Norm::ALL[index % 3];
    let nonneg = (index / 3) % 2 == 1;
    let family = match index % 5 {
        3 => Family::DuplicateRows,
        4 => Family::NearZeroBias,
        _ => Family::Random,
    };
    let epsilon = 10f64.powf(rng.random_range(-2.0..1.0));
    let scale = BIAS_SCALES[(index / 6) % 3] * epsilon;

    let mut rows: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| gaussian(&mut rng)).collect())
        .collect();
    let mut bias: Vec<f64> = (0..m).map(|_| scale * gaussian(&mut rng)).collect();
    match family {
        Family::DuplicateRows if m > 1 => {
            for i in 1..m {
                if rng.random_bool(0.5) {
                    let src = rng.random_range(0..i);
                    rows[i] = rows[src].clone();
                    bias[i] = bias[src];
                }
            }
        }
        Family::NearZeroBias => {
            for b in bias.iter_mut() {
                if rng.random_bool(0.5) {
                    *b = if rng.random_bool(0.5) { 1e-13 } else { -1e-13 };
                }
            }
        }
        _ => {}
    }
    let op = DenseOperator::from_rows(&rows).expect("rows share a length");
    let orthant = if nonneg { Orthant::NonNeg } else { Orthant::Free };
    let domain = PerturbationDomain::with_orthant(norm, epsilon, orthant).expect("finite radius");
    Instance {
        index,
        family,
        op,
        bias,
        domain,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub index: usize,
    pub family: Family,
    pub rows: usize,
    pub cols: usize,
    pub reports: Vec<OracleReport>,
}

impl InstanceOutcome {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }
}

/// Verifies `count` generated instances in parallel; results are in index
/// order.
pub fn verify_suite(count: usize, seed: u64, cfg: &OracleConfig) -> Result<Vec<InstanceOutcome>> {
    (0..count)
        .into_par_iter()
        .map(|index| {
            let inst = generate_instance(seed, index);
            let reports = verify_instance(&inst.op, &inst.bias, &inst.domain, cfg)?;
            Ok(InstanceOutcome {
                index,
                family: inst.family,
                rows: inst.op.rows(),
                cols: inst.op.cols(),
                reports,
            })
        })
        .collect()
}
