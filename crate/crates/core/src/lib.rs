//! Parsimonious Bayesian deep networks for binary classification.
//!
//! The model is a stack of infinite support hyperplane machine (iSHM) pairs:
//! each layer maps its input x through softplus hyperplane activations, the
//! class-1 probability is 1 - exp(-sum_k r_k softplus(beta_k' x)), and a
//! gamma-process prior shrinks the number of active hyperplanes. Layers are
//! trained greedily (by Gibbs sampling or stochastic MAP) and the depth is
//! chosen with an AIC-style criterion.

pub mod dataset;
pub mod error;
pub mod gibbs;
pub mod map;
pub mod model;
pub mod rng;
pub mod samplers;
pub mod stack;

pub use dataset::{
    apply_standardization, load_dense, load_sparse, make_two_spirals, parse_dense, parse_sparse,
    partition, standardize, Dataset, Standardization,
};
pub use error::{Error, Result};
pub use gibbs::{
    alpha_conditional, b_beta_conditional, c0_conditional, gamma0_conditional, r_conditional,
    run_gibbs, theta_conditional, GibbsConfig, GibbsState, TrainResult,
};
pub use map::{map_gradient, map_objective, run_map, MapConfig, MapParams};
pub use model::{pair_prob_one, sigmoid, softplus, Hyperplane, IshmHyperparams, IshmModel, Subtype};
pub use rng::RngStream;
pub use samplers::{
    sample_crt, sample_gamma, sample_multinomial_partition, sample_mvn_from_precision,
    sample_polya_gamma, sample_truncated_poisson,
};
pub use stack::{
    grow, propagate, Concatenation, Criterion, EngineConfig, GrowOptions, IshmPair, PbdnStack,
};

// Re-exported so downstream code can build precision matrices for
// `sample_mvn_from_precision` against the same linear-algebra version.
pub use nalgebra;
