//! Forward investment performance processes of power type in factor markets
//! with jumps: market specification, constraint geometry, the power objective,
//! construction of the performance process, and Monte Carlo / PDE validators.

pub mod config;
pub mod error;
pub mod fipp;
pub mod geometry;
pub mod hjb;
pub mod linalg;
pub mod market;
pub mod mc;
pub mod objective;
pub mod simulate;

pub use error::{FippError, Result};
pub use fipp::{
    bsde_residual, construct_tilted_fipp, construct_time_monotone, driver_f, finite_variation_drift, g_function,
    optimal_strategy_projection, psi_sigma, time_monotone_f, FippSolution, ResidualStats,
};
pub use geometry::{attainment_check, Attainment, ConstraintKind, ConstraintSet, Halfspace};
pub use hjb::{default_grid, hjb_residual, operator_ay, AffineField, PerformanceField, ResidualField};
pub use market::{validate_spec, FactorMarketSpec, JumpAtom, JumpMeasure, LocalMarket, Marginal};
pub use mc::{martingale_test, wealth_path, McOptions, Strategy, TestReport, Verdict};
pub use objective::{jump_integrals, maximize_phi, phi_gradient, phi_value, OptimResult, PowerParams, TiltParams};
pub use simulate::{simulate_coupled, simulate_paths, simulate_paths_with, PathBundle, TimeGrid};
