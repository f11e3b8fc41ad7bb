//! Relational Markov random fields over typed entity universes.
//!
//! A [`Model`] couples a validated scheme (entity types, attributes and
//! template features) with one weight per feature. Grounding it against an
//! [`EntityInstantiation`] gives a [`Universe`] of ground variables, which
//! can be queried by exact enumeration, ground or lifted belief propagation,
//! or Gibbs sampling, and fitted to data by maximum likelihood.

pub mod bp;
pub mod compare;
pub mod error;
pub mod exact;
pub mod fixtures;
pub mod gibbs;
pub mod ground;
pub mod instantiation;
pub mod learning;
pub mod math;
pub mod scheme;
pub mod template;

pub use bp::{BpConfig, Convergence, Schedule, TraceRow};
pub use compare::{compare, run_inference, BackendChoice, CompareConfig, InferenceOutput, InferenceSettings};
pub use error::{Error, Result};
pub use exact::{ExactOracle, ExactResult};
pub use gibbs::{run_gibbs, GibbsConfig, GibbsRun, Scan};
pub use ground::{BeliefSet, GroundFactorGraph};
pub use instantiation::{Assignment, BindingMode, DataFile, EntityInstantiation, Universe};
pub use learning::{fit, landscape_scan, Backend, FitConfig, FitResult, GridAxis, Objective, Optimizer};
pub use scheme::{validate_scheme, Model, ModelDocument, Scheme, ValidScheme, ValidationReport};
pub use template::{TemplateBeliefs, TemplateFactorGraph};
