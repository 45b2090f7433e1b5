//! A procedurally generated open world with drifting causation laws, and a
//! harness that scores agents by how quickly and how well they adapt to it.
//!
//! The pieces, bottom up:
//!
//! - [`worldgen`] builds a world from a [`worldgen::GenSpec`]: polarized
//!   entities on a torus, grouped into composites level by level, each level
//!   with its own sampled pairwise law.
//! - [`dynamics`] advances it one tick at a time.
//! - [`interface`] is all an agent gets: a coarse polarity grid around its
//!   body and bounded forces on its own entities.
//! - [`problems`] poses reachable targets and scores solves.
//! - [`metrics`] turns a cumulative score stream into `alpha`, `beta`,
//!   `gamma` and the merged `I`.
//! - [`harness`] runs episodes, in [`protocol`] speaking to in-process minds
//!   or subprocesses, and records [`trace`]s that can be replayed.
//!
//! ```no_run
//! use openworld::agents::AgentKind;
//! use openworld::harness::{run_episode, EpisodeConfig, Participant};
//!
//! let cfg = EpisodeConfig::default();
//! let outcome = run_episode(&cfg, vec![Participant::builtin(AgentKind::Greedy)])?;
//! let report = &outcome.reports(&cfg.metrics, 0)?[0];
//! println!("I = {:.3}", report.i);
//! # Ok::<(), openworld::Error>(())
//! ```

pub mod agents;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod interface;
pub mod metrics;
pub mod problems;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod trace;
pub mod vector;
pub mod worldgen;

pub use error::{Error, Result};
