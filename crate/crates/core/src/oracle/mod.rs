//! Reference solutions and validation drivers: closed forms, refinement
//! studies, finite-difference gradient checks and synthetic scenarios.

pub mod analytic;
pub mod gradcheck;
pub mod scenario;
pub mod study;

pub use analytic::{
    analytic_distance, away_from_sources, eikonal_residual, error_norms, row_pace, ErrorNorms, ResidualReport,
    SOURCE_EXCLUSION_RADIUS,
};
pub use gradcheck::{
    directional_fd, exact_solve_options, fd_gradient, gradient_check, perturbation_stability,
    random_direction_test, relative_gap, same_selection, stencil_diagnostics, Channel, ChannelCheck, GradCase,
    GradProblem, PointCheck, RandomDirectionReport, StabilityReport, StencilDiagnostics,
};
pub use scenario::{scenario, Scenario, ScenarioKind, ScenarioParams, ScenarioReport};
pub use study::{
    bilinear_sample, convergence_study, fit_rate, relative_difference, richardson_difference, CaseProblem,
    StudyCase, StudyReport, StudyRow,
};
