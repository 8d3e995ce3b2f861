//! Mean-variance estimation in a reproducing kernel Hilbert space with
//! derivative-weighted target functionals, and Wald-type tests of
//! positivity, monotonicity or convexity of a chosen derivative on a grid.
//!
//! The pipeline is:
//!
//! 1. [`multiindex`] enumerates the derivative orders `|α| ≤ s`.
//! 2. [`kernel`] supplies exact mixed partials `D_x^a D_y^b K(x, y)`.
//! 3. [`assembly`] builds the Gram system (`K`, `A`, `ā`, `Σ`) and the grid
//!    products (`K_G`, `G`, `G̃`, `G̃_G`, `h̃`).
//! 4. [`estimator`] solves for the representer coefficients, densely or
//!    through a pivoted Cholesky factorization.
//! 5. [`inference`] computes `θ̂`, the plug-in covariance `Ω̂_λ`, the cone
//!    projection statistic `W_N` and its Monte Carlo p-value.
//! 6. [`simulation`] runs the limit experiment for empirical size and power.

pub mod assembly;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod kernel;
pub mod linalg;
pub mod multiindex;
pub mod oracle;
pub mod rng;
pub mod simulation;

pub use assembly::{build_grid, build_gram, Dataset, GramOptions, GramSystem, GridSystem};
pub use error::{Error, Result};
pub use estimator::{
    evaluate, fit, fit_dense, fit_lowrank, lambda_path, objective, FitOptions, FitResult, SolverPath,
};
pub use inference::{
    moreau_check, omega_hat, pvalue_mc, run_test, theta_hat, wald_statistic, Decision, Direction,
    McSummary, OmegaWorkspace, TestOptions, TestReport, WaldMetric, WaldResult,
};
pub use kernel::{fd_check, DerivativeKernel, KernelFamily, KernelModel};
pub use multiindex::{enumerate, ActiveSet, MultiIndex, MultiIndexSet};
pub use simulation::{
    make_covariance, make_violation, run_experiment, CovarianceParams, Design, Plugin,
    SimulationConfig, SimulationResult, SimulationRow, Violation, ViolationConstants,
};
