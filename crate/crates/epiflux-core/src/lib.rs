//! Simulation and verification toolkit for an age- and trait-structured
//! stochastic epidemic model with memory of the last infection and waning
//! immunity.
//!
//! The crate has three layers:
//!
//! * the exact event-driven particle system ([`sim`]) for `N` interacting
//!   individuals, simulated by thinning with no time-stepping error;
//! * the deterministic large-population limit ([`lln`]): a Volterra fixed
//!   point for the force of infection `F(t)` and the mean susceptibility
//!   `S(t, θ)`, plus the age density along characteristics;
//! * the Gaussian fluctuation system ([`gaussian`], [`fluct`]): the limit
//!   noise functionals with their covariance structure and the linear
//!   stochastic Volterra system for `(F̂, Ŝ)`.
//!
//! [`verify`] ties the layers together with statistical checks: the 1/√N
//! convergence rate, normality and variance of the rescaled error, the
//! quadratic-variation identity of the jump martingale, and the pathwise
//! coupling bound.

pub mod error;
pub mod fluct;
pub mod gaussian;
pub mod grid;
pub mod lln;
pub mod model;
pub mod presets;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod verify;

pub use error::{FluctError, GaussError, LlnError, ModelError, SimError, VerifyError};
pub use grid::TimeGrid;
pub use model::{ModelConfig, ModelSpec, TraitGrid};
