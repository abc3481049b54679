//! Local Lipschitz bounds for a single affine-ReLU layer `relu(A x + b)`,
//! with `b` already re-centred at the nominal input.
//!
//! Upper bounds, loosest first:
//!
//! | bound  | value                         |
//! |--------|-------------------------------|
//! | naive  | `‖A‖`                         |
//! | rbar   | `‖R̄ A‖`, `R̄ = mask_of(ȳ)`      |
//! | nested | `Σᵢ Δβᵢ ‖R̄ᵢ A‖`                |
//!
//! Every spectral norm that enters an upper bound is a power-iteration
//! estimate multiplied by `1 + spectral_slack`.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{bounding_vector, PerturbationDomain};
use crate::error::{check_len, invalid, Error, Result};
use crate::linops::{norm2, DenseOperator, LinearMap, DEFAULT_MATERIALIZE_CAP};
use crate::relu::{apply_relu, breakpoint_schedule, mask_of, BreakpointSchedule, ReluMask};
use crate::sampling::{self, sample_ball, sample_sphere};
use crate::specnorm::{dense_spectral_norm, masked_spectral_norm, PowerIterConfig};

pub const DEFAULT_SPECTRAL_SLACK: f64 = 1e-4;
pub const DEFAULT_LOWER_SAMPLES: usize = 10_000;
pub const DEFAULT_EXHAUSTIVE_DIM_CAP: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub power: PowerIterConfig,
    /// Relative margin added to every power-iteration estimate.
    pub spectral_slack: f64,
    pub materialize_cap: usize,
    pub lower_samples: usize,
    pub lower_seed: u64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            power: PowerIterConfig::default(),
            spectral_slack: DEFAULT_SPECTRAL_SLACK,
            materialize_cap: DEFAULT_MATERIALIZE_CAP,
            lower_samples: DEFAULT_LOWER_SAMPLES,
            lower_seed: 1,
        }
    }
}

impl BoundConfig {
    pub fn with_slack(self, spectral_slack: f64) -> Self {
        Self {
            spectral_slack,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.power.validate()?;
        if !(self.spectral_slack >= 0.0 && self.spectral_slack.is_finite()) {
            return Err(invalid(format!(
                "spectral slack must be finite and non-negative, got {}",
                self.spectral_slack
            )));
        }
        Ok(())
    }

    fn padded(&self, sigma: f64) -> f64 {
        sigma * (1.0 + self.spectral_slack)
    }
}

/// All single-layer estimates at one radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub epsilon: f64,
    pub naive: f64,
    pub rbar: f64,
    pub nested: f64,
    pub lower: f64,
    /// Number of segments `q` in the nested schedule.
    pub segments: usize,
    pub spectral_slack: f64,
}

impl BoundReport {
    /// `naive ≥ rbar ≥ nested ≥ lower`, each step with relative tolerance `tol`.
    pub fn chain_holds(&self, tol: f64) -> bool {
        let ge = |a: f64, b: f64| a >= b - tol * b.abs().max(1.0);
        ge(self.naive, self.rbar) && ge(self.rbar, self.nested) && ge(self.nested, self.lower)
    }
}

/// `‖A‖` (plus slack).
pub fn naive_bound(op: &(impl LinearMap + ?Sized), cfg: &BoundConfig) -> Result<f64> {
    cfg.validate()?;
    let sigma = masked_spectral_norm(op, &ReluMask::all(op.rows()), &cfg.power)?;
    Ok(cfg.padded(sigma))
}

/// `‖R̄ A‖` (plus slack).
pub fn rbar_bound(
    op: &(impl LinearMap + ?Sized),
    bias: &[f64],
    dom: &PerturbationDomain,
    cfg: &BoundConfig,
) -> Result<f64> {
    cfg.validate()?;
    let bv = bounding_vector(op, bias, dom)?;
    let sigma = masked_spectral_norm(op, &mask_of(&bv.ybar), &cfg.power)?;
    Ok(cfg.padded(sigma))
}

/// Power-iteration estimates for each segment mask, raised to a running
/// maximum. The masks are nested, so any earlier estimate is also a valid
/// lower estimate for every later segment.
fn segment_norms(
    op: &(impl LinearMap + ?Sized),
    schedule: &BreakpointSchedule,
    power: &PowerIterConfig,
) -> Result<Vec<f64>> {
    let raw: Vec<f64> = schedule
        .masks
        .par_iter()
        .map(|mask| masked_spectral_norm(op, mask, power))
        .collect::<Result<_>>()?;
    Ok(raw
        .into_iter()
        .scan(0.0f64, |best, s| {
            *best = best.max(s);
            Some(*best)
        })
        .collect())
}

fn weighted_sum(schedule: &BreakpointSchedule, norms: &[f64], cfg: &BoundConfig) -> f64 {
    schedule
        .deltas
        .iter()
        .zip(norms)
        .map(|(d, s)| d * cfg.padded(*s))
        .sum()
}

/// `Σᵢ Δβᵢ ‖R̄ᵢ A‖` (each norm plus slack), with the schedule it was built on.
pub fn nested_bound(
    op: &(impl LinearMap + ?Sized),
    bias: &[f64],
    dom: &PerturbationDomain,
    cfg: &BoundConfig,
) -> Result<(f64, BreakpointSchedule)> {
    cfg.validate()?;
    let bv = bounding_vector(op, bias, dom)?;
    let schedule = breakpoint_schedule(&bv);
    let norms = segment_norms(op, &schedule, &cfg.power)?;
    Ok((weighted_sum(&schedule, &norms, cfg), schedule))
}

fn check_lower_args(op: &(impl LinearMap + ?Sized), bias: &[f64], dom: &PerturbationDomain, n: usize) -> Result<()> {
    check_len("bias", bias.len(), op.rows())?;
    dom.check_dim(op.cols())?;
    if dom.epsilon <= 0.0 {
        return Err(invalid("sampled lower bound needs a positive radius"));
    }
    if n == 0 {
        return Err(invalid("sampled lower bound needs at least one sample"));
    }
    Ok(())
}

/// `‖relu(A x + b) − relu(b)‖ / ‖x‖` for one perturbation.
pub(crate) fn relu_ratio(
    op: &(impl LinearMap + ?Sized),
    bias: &[f64],
    base: &[f64],
    x: &[f64],
    buf: &mut [f64],
) -> f64 {
    let nx = norm2(x);
    if nx == 0.0 {
        return 0.0;
    }
    op.apply_into(x, buf);
    let diff: f64 = buf
        .iter()
        .zip(bias)
        .zip(base)
        .map(|((y, b), r)| {
            let d = (y + b).max(0.0) - r;
            d * d
        })
        .sum();
    diff.sqrt() / nx
}

/// Largest ratio over `n_samples` perturbations on the `ε`-sphere of the
/// domain. A lower bound on the local Lipschitz constant.
pub fn lower_bound_sampled(
    op: &(impl LinearMap + ?Sized),
    bias: &[f64],
    dom: &PerturbationDomain,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    check_lower_args(op, bias, dom, n_samples)?;
    let base = apply_relu(bias);
    let mut rng = sampling::rng(seed);
    let mut buf = vec![0.0; op.rows()];
    let mut best = 0.0f64;
    for _ in 0..n_samples {
        let x = sample_sphere(&mut rng, op.cols(), dom);
        best = best.max(relu_ratio(op, bias, &base, &x, &mut buf));
    }
    Ok(best)
}

/// Every certified and sampled estimate for one layer at one radius.
///
/// The segment estimates are shared between `rbar` and `nested` (the last
/// segment mask is `R̄`), and `naive` is raised to at least `rbar`, so the
/// report satisfies the ordering chain by construction.
pub fn analyze_layer(
    op: &(impl LinearMap + ?Sized),
    bias: &[f64],
    dom: &PerturbationDomain,
    cfg: &BoundConfig,
) -> Result<BoundReport> {
    cfg.validate()?;
    let bv = bounding_vector(op, bias, dom)?;
    let schedule = breakpoint_schedule(&bv);
    let norms = segment_norms(op, &schedule, &cfg.power)?;
    let rbar_sigma = *norms.last().expect("schedule has at least one segment");
    let full = ReluMask::all(op.rows());
    let naive_sigma = if schedule.masks.last() == Some(&full) {
        rbar_sigma
    } else {
        masked_spectral_norm(op, &full, &cfg.power)?.max(rbar_sigma)
    };
    let lower = if dom.epsilon > 0.0 {
        lower_bound_sampled(op, bias, dom, cfg.lower_samples.max(1), cfg.lower_seed)?
    } else {
        0.0
    };
    Ok(BoundReport {
        epsilon: dom.epsilon,
        naive: cfg.padded(naive_sigma),
        rbar: cfg.padded(rbar_sigma),
        nested: weighted_sum(&schedule, &norms, cfg),
        lower,
        segments: schedule.len(),
        spectral_slack: cfg.spectral_slack,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmaxMode {
    /// Maximum over all `2^m` masks: over-approximates `‖R_max A‖`.
    Exhaustive,
    /// Maximum over masks hit by sampled perturbations: under-approximates it.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmaxOptions {
    /// `None` picks exhaustive when `m ≤ exhaustive_dim_cap`.
    pub mode: Option<RmaxMode>,
    pub samples: usize,
    pub exhaustive_dim_cap: usize,
    pub seed: u64,
    pub materialize_cap: usize,
}

impl Default for RmaxOptions {
    fn default() -> Self {
        Self {
            mode: None,
            samples: 2_000,
            exhaustive_dim_cap: DEFAULT_EXHAUSTIVE_DIM_CAP,
            seed: 17,
            materialize_cap: DEFAULT_MATERIALIZE_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmaxEstimate {
    pub value: f64,
    pub mode: RmaxMode,
    /// Number of distinct masks whose norm was computed.
    pub masks_evaluated: usize,
}

/// Brute-force bracket on `‖R_max A‖` for small dense layers.
pub fn rmax_bound_enumerated(
    op: &DenseOperator,
    bias: &[f64],
    dom: &PerturbationDomain,
    opts: &RmaxOptions,
) -> Result<RmaxEstimate> {
    let m = op.rows();
    check_len("bias", bias.len(), m)?;
    dom.check_dim(op.cols())?;
    let mode = opts.mode.unwrap_or(if m <= opts.exhaustive_dim_cap {
        RmaxMode::Exhaustive
    } else {
        RmaxMode::Sampled
    });
    let cap = opts.materialize_cap;
    match mode {
        RmaxMode::Exhaustive => {
            if m > opts.exhaustive_dim_cap || m >= usize::BITS as usize {
                return Err(Error::Capacity {
                    what: "exhaustive mask enumeration",
                    requested: 1u128 << m.min(127),
                    cap: 1u128 << opts.exhaustive_dim_cap.min(127),
                });
            }
            let value = (0..1usize << m)
                .into_par_iter()
                .map(|bits| {
                    let mask = ReluMask::new((0..m).map(|i| bits >> i & 1 == 1).collect());
                    dense_spectral_norm(op, &mask, cap)
                })
                .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
            Ok(RmaxEstimate {
                value,
                mode,
                masks_evaluated: 1 << m,
            })
        }
        RmaxMode::Sampled => {
            let mut rng = sampling::rng(opts.seed);
            let mut masks: HashSet<ReluMask> = HashSet::new();
            masks.insert(mask_of(bias));
            let mut y = vec![0.0; m];
            for k in 0..opts.samples {
                let x = if k % 2 == 0 {
                    sample_sphere(&mut rng, op.cols(), dom)
                } else {
                    sample_ball(&mut rng, op.cols(), dom)
                };
                op.apply_into(&x, &mut y);
                y.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
                masks.insert(mask_of(&y));
            }
            let mut masks: Vec<ReluMask> = masks.into_iter().collect();
            masks.sort_by(|a, b| a.bits().cmp(b.bits()));
            let value = masks
                .par_iter()
                .map(|mask| dense_spectral_norm(op, mask, cap))
                .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
            Ok(RmaxEstimate {
                value,
                mode,
                masks_evaluated: masks.len(),
            })
        }
    }
}
