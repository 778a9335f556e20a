//! Unpredictable control toolkit: optimal stochastic input distributions for
//! linear systems, prediction-based attacker models, and the resulting
//! control-performance trade-offs.

// index-based loops over matrix axes are the local idiom
#![allow(clippy::needless_range_loop)]

pub mod attacker;
pub mod control;
pub mod dist;
pub mod error;
pub mod lp;
pub mod lti;
pub mod noise;

pub use attacker::{
    attacker_step, conf_prob_gaussian_isotropic, conf_prob_uniform_box, estimate_metrics,
    optimal_input_prediction, AttackerMode, AttackerSpec, AttackerState, InputPredictionRule,
    KalmanConfig, Observation, UnpredictabilityMetrics,
};
pub use control::{
    anchored_error_system, build_collective, consensus_input, coop_degradation, extra_cost,
    propagate_moments, solve_discrete_lyapunov, solve_lqr, tradeoff_coop, tradeoff_lqr, AxisBox,
    CollectiveSystem, CoopNetwork, CoopWeights, CostVarianceTerm, LqrCost, LqrGain, LqrSolution,
    LyapunovOutcome, StateMoments,
};
pub use dist::{
    compute_cov_bounds, orthogonal_reduction, solve_optimal_distribution, tail_radius,
    CovarianceBounds, DiscreteDistribution, GridOptions, Monotonicity, Reduction, SphericalGrid,
};
pub use error::{Error, Result};
pub use lp::{solve_lp, LinearProgram, LpSolution, LpStatus, SolveOptions};
pub use lti::{LtiSystem, PlantState, PredictionRecord};
pub use noise::{
    compute_extra_input, generate_unpredictable_input, sample_theta, sample_theta_full,
    write_samples_csv, IntraPieceMode, NoiseKind, NoiseSource,
};
