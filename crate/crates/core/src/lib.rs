//! Synthesis and evaluation of event-evolution instruction data.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`diversify`]: tag seed events with trigger verbs and cap each trigger.
//! 2. [`evolve`]: grow each seed into forward and backward event trees
//!    through a [`provider::Provider`].
//! 3. [`induce`] and [`encapsulate`]: collapse seed-to-node relation paths
//!    and render open-generation instruction data from templates.
//! 4. [`discriminate`]: mine semantic and evolving negatives and build
//!    multiple-choice rows.
//! 5. [`metrics`]: decode close answers and score predictions.

pub mod discriminate;
pub mod diversify;
pub mod encapsulate;
pub mod evolve;
pub mod induce;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod provider;
pub mod rng;
pub mod ted;
pub mod text;

pub use model::{DepTree, Event, EvolvingGraph, GraphNode, InstructionDatum, Relation, TaskKind, Template};
