//! ReLU masks and the nested breakpoint schedule.

use serde::{Deserialize, Serialize};

use crate::domains::BoundingVertex;

/// Breakpoints closer than this are merged into one segment boundary.
pub const BREAKPOINT_MERGE_TOL: f64 = 1e-12;

/// Diagonal 0/1 matrix selecting the strictly positive coordinates of a vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReluMask(Vec<bool>);

impl ReluMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn all(m: usize) -> Self {
        Self(vec![true; m])
    }

    pub fn none(m: usize) -> Self {
        Self(vec![false; m])
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_active(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_zero(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    /// `true` when every active bit of `self` is also active in `other`.
    pub fn is_subset_of(&self, other: &ReluMask) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(&a, &b)| !a || b)
    }

    /// Zeroes the inactive coordinates of `y` in place.
    pub fn apply_in_place(&self, y: &mut [f64]) {
        for (v, &keep) in y.iter_mut().zip(&self.0) {
            if !keep {
                *v = 0.0;
            }
        }
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let mut out = y.to_vec();
        self.apply_in_place(&mut out);
        out
    }
}

/// `ind(y) = 1` iff `y > 0`, elementwise.
pub fn mask_of(y: &[f64]) -> ReluMask {
    ReluMask(y.iter().map(|&v| v > 0.0).collect())
}

pub fn apply_relu(y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| v.max(0.0)).collect()
}

/// Scale factors `0 < β₁ < … < β_q = 1` of the nested bounding regions `βᵢ𝓗`
/// with the mask of each region's upper vertex `b + βᵢ l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakpointSchedule {
    pub betas: Vec<f64>,
    pub masks: Vec<ReluMask>,
    pub deltas: Vec<f64>,
}

impl BreakpointSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// `(Δβᵢ, R̄ᵢ)` pairs in segment order.
    pub fn segments(&self) -> impl Iterator<Item = (f64, &ReluMask)> {
        self.deltas.iter().copied().zip(&self.masks)
    }
}

/// Builds the schedule from the points where `b + β l` crosses zero.
///
/// Segment `i` covers `(βᵢ₋₁, βᵢ]` and carries the mask of `b + β l` on
/// that segment: a coordinate is active once its crossing lies strictly
/// below `βᵢ`, so one crossing exactly at `βᵢ` turns on in segment `i + 1`.
/// Masks are decided from the crossing points rather than by re-evaluating
/// `b + βᵢ l`, whose sign at its own crossing is decided by rounding. The
/// last mask is `ind(ȳ)`, and every mask is clipped to it. Adjacent
/// segments that end up with identical masks are fused.
pub fn breakpoint_schedule(bv: &BoundingVertex) -> BreakpointSchedule {
    let b = &bv.bias_ref;
    let l = &bv.l;
    let last = mask_of(&bv.ybar);
    // crossing point of each coordinate; 0 for always-on, ∞ for never-on
    let crossing: Vec<f64> = b
        .iter()
        .zip(l)
        .map(|(&bj, &lj)| {
            if bj > 0.0 || (bj == 0.0 && lj > 0.0) {
                0.0
            } else if bj < 0.0 && lj > 0.0 {
                -bj / lj
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let mut candidates: Vec<f64> = crossing
        .iter()
        .copied()
        .filter(|&t| t > 0.0 && t < 1.0)
        .collect();
    candidates.sort_by(f64::total_cmp);

    let mut betas: Vec<f64> = Vec::with_capacity(candidates.len() + 1);
    let mut cluster_start = f64::NEG_INFINITY;
    for t in candidates {
        if t - cluster_start > BREAKPOINT_MERGE_TOL {
            betas.push(t);
            cluster_start = t;
        }
    }
    betas.push(1.0);

    let mask_at = |beta: f64| -> ReluMask {
        if beta == 1.0 {
            return last.clone();
        }
        ReluMask(
            crossing
                .iter()
                .zip(last.bits())
                .map(|(&t, &on)| on && t < beta)
                .collect(),
        )
    };

    let mut schedule = BreakpointSchedule {
        betas: Vec::with_capacity(betas.len()),
        masks: Vec::with_capacity(betas.len()),
        deltas: Vec::with_capacity(betas.len()),
    };
    let mut prev_beta = 0.0;
    for beta in betas {
        let mask = mask_at(beta);
        match schedule.masks.last() {
            Some(last) if *last == mask => {
                *schedule.betas.last_mut().unwrap() = beta;
                *schedule.deltas.last_mut().unwrap() += beta - prev_beta;
            }
            _ => {
                schedule.betas.push(beta);
                schedule.deltas.push(beta - prev_beta);
                schedule.masks.push(mask);
            }
        }
        prev_beta = beta;
    }
    schedule
}
