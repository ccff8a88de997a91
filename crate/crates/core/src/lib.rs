//! Incentive design for offloading mobile data to third-party WiFi access points.
//!
//! An operator (leader) announces a salary rate and a bonus pool; access points
//! (followers) pick how much data to carry. The crate computes follower equilibria,
//! the operator's best offer under three payment schemes, and Monte-Carlo comparisons.

pub mod equilibrium;
pub mod error;
pub mod leader;
pub mod model;
pub mod response;
pub mod sim;

pub use equilibrium::{
    homogeneous_profiles, ne_bonus_only, ne_homogeneous, ne_iterative, ne_salary_only,
    ne_spb_suboptimal, ne_two_ap, verify_ne, Algorithm3Options, BonusOnlyStructure,
    EquilibriumReport, IterativeOptions, Method, Verification, NE_TOLERANCE,
};
pub use error::{Error, Result};
pub use leader::{
    bonus_bound, grid_search_spb, optimal_bonus_homogeneous, optimal_bonus_only,
    optimal_homogeneous, optimal_price_salary_only, optimal_spb_suboptimal, GridOptions,
    MnoSolution, NeSolver, SalaryOnlyOptions, SuboptimalSearchOptions, TracePoint, TraceStatus,
};
pub use model::{ap_utility, mno_utility, Allocation, ApProfile, MnoParams, Offer, Scheme};
pub use response::best_response;
pub use sim::{
    export_csv, export_trace, generate_scenario, read_csv, run_comparison, ComparisonOptions,
    ComparisonReport, ComparisonRow, CostRegime, RunRecord, Scenario,
};
