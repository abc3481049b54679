//! Certified upper bounds and sampled lower bounds on the local Lipschitz
//! constant of affine-ReLU layers and feedforward ReLU networks.
//!
//! A layer `relu(A x + b)` is analysed about a nominal input: the bias has
//! already been re-centred so that `x` is a perturbation from the nominal
//! point. Three certified bounds are available, from loosest to tightest:
//!
//! * [`bounds::naive_bound`]: the spectral norm `‖A‖`;
//! * [`bounds::rbar_bound`]: `‖R̄ A‖`, where `R̄` masks the rows that can never
//!   become positive inside the axis-aligned bounding region of `A 𝒳 + b`;
//! * [`bounds::nested_bound`]: `Σ Δβᵢ ‖R̄ᵢ A‖` over a schedule of scaled
//!   bounding regions.
//!
//! [`network::propagate`] chains the per-layer bounds through a whole model,
//! and [`oracle`] provides brute-force cross-checks at small sizes.

pub mod bounds;
pub mod cli;
pub mod domains;
mod error;
pub mod linops;
pub mod network;
pub mod oracle;
pub mod relu;
pub mod sampling;
pub mod specnorm;

pub use error::{Error, Result};

pub use bounds::{BoundConfig, BoundReport};
pub use domains::{BoundingVertex, Norm, Orthant, PerturbationDomain};
pub use linops::{Conv2dOperator, DenseOperator, LinearMap, LinearOperator, TensorShape};
pub use network::{Layer, Method, NetworkModel, PropagationTrace};
pub use relu::{BreakpointSchedule, ReluMask};
pub use specnorm::PowerIterConfig;
