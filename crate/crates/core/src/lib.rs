//! Differentiable eikonal solver for Randers metrics on Cartesian grids.
//!
//! The forward pass ([`sweeper`]) computes arrival times `T` solving
//! `||grad T + b||_{G^-1} = 1` by fast sweeping over eight triangular
//! stencils. The backward pass ([`adjoint`]) differentiates the converged
//! fixed point implicitly with one back-substitution in arrival order.
//! [`inversion`] recovers `(G, b)` from sparse arrival times, keeping the
//! iterate feasible with the projections in [`feasibility`]. [`oracle`] holds
//! closed-form references and validation drivers.

pub mod adjoint;
pub mod error;
pub mod feasibility;
pub mod fields;
pub mod inversion;
pub mod io;
pub mod linalg;
pub mod oracle;
pub mod stencil;
pub mod sweeper;

pub use adjoint::{backward, loss_grad_mse, Backward, ObservationSet, ParamGradients, StencilRecords};
pub use error::{Error, Result};
pub use feasibility::{project_drift, project_spd, ProjectionConfig, TvVariant};
pub use fields::{
    is_reached, ArrivalField, DriftField, Grid2, GridSpec, MetricField, ScalarField, SourceMask, UNREACHED,
};
pub use inversion::{
    generate_observations, objective_and_grad, recover, InverseConfig, Optimizer, Parameterization, RecoveryResult,
};
pub use linalg::{Sym2, Vec2};
pub use sweeper::{solve, solve_jacobi, SolveOptions, SolveReport};
