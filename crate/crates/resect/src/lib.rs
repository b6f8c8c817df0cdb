//! Tools for turning continuous knee-resection plans into discrete token
//! streams, decoding those streams under grammar and safety masks, executing
//! them on a kinematic benchtop simulator, and scoring the result.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`grammar`] quantizes continuous action parameters into symbolic bins
//!   and defines the token vocabulary.
//! * [`decoder`] constrains token-by-token decoding so that only
//!   grammatically well-formed and physically safe actions can be emitted.
//! * [`geometry`] provides rigid transforms, the pose graph, resection
//!   planes, and patch sampling.
//! * [`timeline`] aligns asynchronous sensor streams onto a fixed reference
//!   grid with explicit staleness accounting.
//! * [`sim`] executes decoded actions on a simulated bench rig.
//! * [`eval`] computes Chamfer deviation, success rates, and path-efficiency
//!   scores.
//! * [`policy`] supplies logits: a scripted oracle, a random baseline, and a
//!   remote backend speaking a small JSON wire protocol.
//! * [`episode`] defines the JSONL record formats shared by the CLI
//!   subcommands.

pub mod config;
pub mod decoder;
pub mod episode;
pub mod eval;
pub mod geometry;
pub mod grammar;
pub mod parallel;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod timeline;
