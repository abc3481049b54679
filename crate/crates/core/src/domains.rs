//! Perturbation sets and the upper bounding vertex of their affine image.
//!
//! For a domain `𝒳` and operator rows `aᵢ`, the distance vector is
//! `lᵢ = max_{x∈𝒳} aᵢᵀx` and the bounding vertex is `ȳ = b + l`, so every
//! `A x + b` with `x ∈ 𝒳` satisfies `A x + b ≤ ȳ` elementwise.
//!
//! Sign constraints are handled by replacing the constrained entries of each
//! row with their positive parts before applying the unconstrained formula.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::linops::{LinearMap, DEFAULT_ROW_BATCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    pub fn of(self, x: &[f64]) -> f64 {
        match self {
            Norm::L1 => x.iter().map(|v| v.abs()).sum(),
            Norm::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Norm::Linf => x.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
        }
    }

    pub const ALL: [Norm; 3] = [Norm::L1, Norm::L2, Norm::Linf];
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        })
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "1" => Ok(Norm::L1),
            "l2" | "2" => Ok(Norm::L2),
            "linf" | "inf" => Ok(Norm::Linf),
            _ => Err(invalid(format!("unknown norm {s:?}"))),
        }
    }
}

/// Which coordinates of a perturbation are known to be non-negative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orthant {
    Free,
    NonNeg,
    /// `true` marks a coordinate constrained to `xⱼ ≥ 0`.
    Partial(Vec<bool>),
}

impl Orthant {
    pub fn is_constrained(&self, j: usize) -> bool {
        match self {
            Orthant::Free => false,
            Orthant::NonNeg => true,
            Orthant::Partial(bits) => bits[j],
        }
    }

    /// Collapses a per-coordinate pattern to `Free`/`NonNeg` when uniform.
    pub fn from_bits(bits: Vec<bool>) -> Self {
        if bits.iter().all(|&b| b) {
            Orthant::NonNeg
        } else if bits.iter().all(|&b| !b) {
            Orthant::Free
        } else {
            Orthant::Partial(bits)
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, Orthant::Free)
    }
}

/// The perturbation set `𝒳 = {x : ‖x‖ ≤ ε}`, optionally intersected with a
/// (partial) non-negative orthant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationDomain {
    pub norm: Norm,
    pub epsilon: f64,
    pub orthant: Orthant,
}

impl PerturbationDomain {
    pub fn new(norm: Norm, epsilon: f64, nonneg: bool) -> Result<Self> {
        let orthant = if nonneg { Orthant::NonNeg } else { Orthant::Free };
        Self::with_orthant(norm, epsilon, orthant)
    }

    pub fn with_orthant(norm: Norm, epsilon: f64, orthant: Orthant) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(invalid(format!(
                "perturbation radius must be finite and non-negative, got {epsilon}"
            )));
        }
        Ok(Self {
            norm,
            epsilon,
            orthant,
        })
    }

    pub fn l2(epsilon: f64) -> Result<Self> {
        Self::new(Norm::L2, epsilon, false)
    }

    pub fn is_nonneg(&self) -> bool {
        matches!(self.orthant, Orthant::NonNeg)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::with_orthant(self.norm, epsilon, self.orthant.clone())
    }

    pub(crate) fn check_dim(&self, n: usize) -> Result<()> {
        if let Orthant::Partial(bits) = &self.orthant {
            check_len("orthant pattern", bits.len(), n)?;
        }
        Ok(())
    }

    /// Membership test with a relative slack of `tol` on the radius.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.norm.of(x) <= self.epsilon * (1.0 + tol) + tol
            && x
                .iter()
                .enumerate()
                .all(|(j, &v)| !self.orthant.is_constrained(j) || v >= 0.0)
    }

    /// Row after zeroing constrained negative entries.
    fn effective_row<'a>(&'a self, row: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        row.iter().enumerate().map(move |(j, &a)| {
            if self.orthant.is_constrained(j) {
                a.max(0.0)
            } else {
                a
            }
        })
    }

    /// `max_{x∈𝒳} aᵀx` for a single row.
    pub fn row_extent(&self, row: &[f64]) -> f64 {
        let eff = self.effective_row(row);
        let unit = match self.norm {
            Norm::L1 => eff.fold(0.0, |m, a| f64::max(m, a.abs())),
            Norm::L2 => eff.map(|a| a * a).sum::<f64>().sqrt(),
            Norm::Linf => eff.map(f64::abs).sum(),
        };
        self.epsilon * unit
    }

    /// The analytic maximizer `x*` of `aᵀx` over the domain.
    pub fn maximizer(&self, row: &[f64]) -> Vec<f64> {
        let eff: Vec<f64> = self.effective_row(row).collect();
        let eps = self.epsilon;
        let mut x = vec![0.0; eff.len()];
        match self.norm {
            Norm::L1 => {
                let best = eff
                    .iter()
                    .enumerate()
                    .fold((0, 0.0), |(bj, bv), (j, &a)| {
                        if a.abs() > bv {
                            (j, a.abs())
                        } else {
                            (bj, bv)
                        }
                    });
                if best.1 > 0.0 {
                    x[best.0] = eps * eff[best.0].signum();
                }
            }
            Norm::L2 => {
                let n = eff.iter().map(|a| a * a).sum::<f64>().sqrt();
                if n > 0.0 {
                    for (xj, a) in x.iter_mut().zip(&eff) {
                        *xj = eps * a / n;
                    }
                }
            }
            Norm::Linf => {
                for (xj, &a) in x.iter_mut().zip(&eff) {
                    *xj = if a > 0.0 {
                        eps
                    } else if a < 0.0 {
                        -eps
                    } else {
                        0.0
                    };
                }
            }
        }
        x
    }
}

/// Upper vertex `ȳ = b + l` of the axis-aligned region bounding `A 𝒳 + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingVertex {
    pub l: Vec<f64>,
    pub ybar: Vec<f64>,
    pub bias_ref: Vec<f64>,
}

impl BoundingVertex {
    /// Assembles a vertex from a distance vector; `ybar` is always `bias + l`.
    pub fn from_parts(bias: Vec<f64>, l: Vec<f64>) -> Result<Self> {
        check_len("distance vector", l.len(), bias.len())?;
        if let Some(j) = l.iter().position(|v| !(*v >= 0.0)) {
            return Err(invalid(format!(
                "distance vector entry {j} is {} (must be >= 0)",
                l[j]
            )));
        }
        let ybar = bias.iter().zip(&l).map(|(b, l)| b + l).collect();
        Ok(Self {
            l,
            ybar,
            bias_ref: bias,
        })
    }
}

/// Computes the bounding vertex, extracting rows of `op` in batches.
pub fn bounding_vector(
    op: &(impl LinearMap + ?Sized),
    bias: &[f64],
    dom: &PerturbationDomain,
) -> Result<BoundingVertex> {
    let m = op.rows();
    check_len("bias", bias.len(), m)?;
    dom.check_dim(op.cols())?;
    let n = op.cols();
    let indices: Vec<usize> = (0..m).collect();
    let l: Vec<f64> = indices
        .par_chunks(DEFAULT_ROW_BATCH)
        .flat_map_iter(|batch| {
            let mut row = vec![0.0; n];
            batch
                .iter()
                .map(|&i| {
                    op.row_into(i, &mut row);
                    dom.row_extent(&row)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    BoundingVertex::from_parts(bias.to_vec(), l)
}
