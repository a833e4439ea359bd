//! Iterated conditional SMC, particle Gibbs and their relatives, together with
//! exact finite-state oracles for the constants that govern their convergence.
//!
//! Samplers run on any [`FeynmanKacModel`]. Finite models ([`DiscreteFk`]) can
//! additionally be enumerated exactly: the i-cSMC kernel as a matrix, its
//! spectrum, asymptotic variances, and the expectations under doubly
//! conditional SMC that the minorization constants are built from.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix `f64`.

pub mod bounds;
pub mod c2smc;
pub mod csmc;
pub mod enumerate;
pub mod error;
pub mod fixtures;
pub mod fk_model;
pub mod harness;
pub mod numeric;
pub mod oracle;
pub mod pgibbs;
pub mod rng;
pub mod scalar;
pub mod smc;
pub mod trajectory;

pub use bounds::{
    epsilon_bounded, epsilon_isir, epsilon_mixing, gamma_hat_sup, minorized_chain_bounds, pimh_epsilon, tuning_c_star, BoundSource,
};
pub use c2smc::{
    alpha_constant, beta_delta_constants, c2smc_expectation_bruteforce, c2smc_expectation_closed_form, run_c2smc, ClosedFormStrategy,
    IndexChain,
};
pub use csmc::{artificial_joint_step, icsmc_chain, run_csmc, select_path};
pub use error::{Error, Result};
pub use fk_model::{exact_target, FeynmanKacModel, ModelSpec};
pub use harness::{batch_means_variance, run_experiment, sticky_experiment, ExperimentConfig, ExperimentKind};
pub use oracle::{exact_asymptotic_variance, exact_minorization, exact_pn_matrix, spectral_summary, tv_curve, SpectralSummary};
pub use pgibbs::{
    exact_gibbs_matrices, exact_phi_matrices, path_chain_checks, pgibbs_step, pimh_step, pmmh_step, rho_constants, theta_chain_checks,
    RhoEstimate,
};
pub use rng::{CounterRng, Streams};
pub use scalar::Real;
pub use smc::{gamma_hat, multinomial_resample, run_smc, NormConstEstimate};
pub use trajectory::Trajectory;

pub type DiscreteModel = fk_model::DiscreteFk<f64>;
pub type DiscreteModel32 = fk_model::DiscreteFk<f32>;
pub type Target = fk_model::TargetLaw<f64>;
pub type Chain = oracle::FiniteChain<f64>;
pub type Particles = smc::ParticleSystem<usize, f64>;
pub type Trace = csmc::ChainTrace<usize, f64>;
pub type Bounds = bounds::BoundReport<f64>;
pub type Joint = pgibbs::JointModel<f64>;
pub type MixingConstants = c2smc::MixingConstants<f64>;

pub use fk_model::DiscreteFk;
