//! Synchronous radio-network simulator with sleeping-model energy accounting,
//! plus maximal-independent-set protocols for the collision-detection (CD),
//! no-CD, and beeping channel models.
//!
//! The crate is organized around a round-driven engine ([`engine`]) that runs
//! per-node state machines over an unknown communication graph ([`topology`]),
//! charging energy only for rounds in which a node transmits or listens. The
//! protocol implementations live in [`mis_cd`] (rank competition with
//! collision detection) and [`mis_nocd`] (competition, commit mechanism, and
//! deep/shallow checks built from the [`backoff`] primitives). Every run
//! produces a replayable [`trace::Trace`]; the [`verify`] module re-derives
//! observations, energy, and protocol invariants from traces and provides the
//! statistics used by experiment sweeps.

pub mod backoff;
pub mod engine;
pub mod mis_cd;
pub mod mis_nocd;
pub mod rng;
pub mod stats;
pub mod topology;
pub mod trace;
pub mod verify;

pub use engine::{
    run_protocol, ChannelModel, EngineError, EngineOptions, NodeStatus, Observation, RoundAction,
};
pub use topology::Graph;
pub use trace::Trace;
