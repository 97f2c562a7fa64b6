//! Deadzone-adapted disturbance suppression for matched nonlinear plants.
//!
//! The crate covers the whole pipeline of the lab: plant families
//! ([`plants`]), Lyapunov designs and their sampled certificates
//! ([`designs`]), control and update laws ([`controllers`]), closed-loop
//! integration ([`sim`]), trajectory-level bound checks ([`analysis`]) and
//! the scenario file format ([`config`]).

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod controllers;
pub mod designs;
pub mod error;
pub mod plants;
pub mod poly;
pub mod sim;

pub use analysis::{BoundReport, DriftWitness, EquilibriumSet, GainBoundInputs, TailStats};
pub use config::{DesignConfig, DesignFile, LoadedScenario, ScenarioFile};
pub use controllers::{AdaptedKind, Controller, DadsParams, KappaFn, NoDeadzoneParams, RobustParams, SigmaModParams};
pub use designs::{Assumption, CertReport, ClfDesign, GridSpec, LinearDesign, ZetaEnvelope};
pub use error::{Error, Result};
pub use plants::{ChainSpec, MismatchedPlant, Plant, PlantRef, PlantSpec};
pub use poly::{Monomial, Polynomial};
pub use sim::{DisturbanceSignal, Scenario, SolverConfig, SolverMethod, Trajectory};
