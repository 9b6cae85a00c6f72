//! Data-generating models for simulated cluster-randomized SMARTs and a
//! Monte Carlo power harness built on the estimator.

mod generate;
mod mc;
mod moments;
mod presets;
mod scenario;

pub use generate::{generate_forced, generate_trial, generate_with_rng};
pub use mc::{mc_power, replication_seed, McConfig, PowerEstimate};
pub use moments::{
    cell_moments, clip_fk, cov_x_clipped, covariate_term_variance, effect_size, implied_cor2_raw,
    marginal_moments, mix, mixture_moments, unconditional_moments, var_clipped_normal, MarginalMoments,
    Unconditional,
};
pub use presets::{preset, presets, Preset};
pub use scenario::{CellParams, Scenario};
