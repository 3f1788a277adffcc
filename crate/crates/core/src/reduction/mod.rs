//! Lyapunov–Schmidt reduction for the product tori `T^n_a` in a flat
//! symplectic torus with a perturbed compatible metric.
//!
//! For a frame `(p, υ)` and scale `t` the torus is placed by the affine
//! Darboux chart `z ↦ p + tυz`, and nearby Lagrangians are graphs `Φ(Γ_{df})`
//! of the action-angle Weinstein chart. `F^t(f)` is the volume of the graph in
//! the rescaled metric `g^t`, `P^t` its `L²` gradient. The projected solve
//! removes every component of `P^t` outside `Ker ℒ`; what remains, `H^t`, is
//! the gradient of the reduced function `K^t` through `Ψ^t`.

mod chart;
mod context;
mod functional;
mod optimize;
mod variation;

pub use chart::{GraphJets, WeinsteinChart};
pub use context::{FlatData, KernelCoordinates, ReductionConfig, ReductionContext, ReductionState};
pub use optimize::{
    DirectionQ, OptimizationReport, OptimizationStep, OptimizationVerdict, OptimizerConfig,
    SecondVariationReport,
};
pub use variation::{GradientReport, PsiReport, VariationPotential};
