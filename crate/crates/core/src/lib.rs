//! Structural commodity futures engine.
//!
//! Demand follows a mean-reverting Gaussian process; the spot price is a
//! deterministic scarcity-and-marginal-cost map of demand; the futures price
//! on the single traded contract is the expectation of the terminal spot
//! under a pricing measure defined by an affine market price of demand risk.
//! On top of the pricing layer, the engine solves the producer's joint
//! production / storage / trading control problem with power utility by an
//! explicit monotone finite-difference scheme, simulates the controlled
//! system, and ships executable consistency checks for the no-arbitrage
//! properties the model is built on (terminal convergence, martingality,
//! change-of-measure identities, the volatility formula).
//!
//! The data-parallel inner loops (Monte Carlo paths, curve grids, solver
//! sweeps) run on rayon with the default `parallel` feature and fall back to
//! sequential iterators without it; results are bitwise identical either way.

pub mod checks;
pub mod config;
pub mod control;
pub mod demand;
pub mod error;
mod exec;
pub mod market;
pub mod persist;
pub mod policy;
pub mod pricing;
pub mod quad;
pub mod sim;

pub use config::EngineConfig;
pub use control::{evaluate_policy, extract_policy, solve_hjb, GridPolicy, GridSpec, ValueGrid};
pub use demand::{
    conditional_law, sample_transition, transition_factor, DemandModel, GaussianLaw, RiskPrice,
};
pub use error::{EngineError, Result};
pub use market::{CostSpec, ProducerSpec, SpotMap};
pub use policy::{ConstantPolicy, MyopicPolicy, Policy, ZeroPolicy};
pub use pricing::{CurvePoint, FuturesModel, MartingaleReport};
pub use sim::{delivery_closure_check, simulate_bundle, FuturesUpdate, PathBundle};
