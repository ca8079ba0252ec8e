//! Dropout-resilient distributed differential privacy at desk scale.
//!
//! The crate bundles the pieces of a dropout-tolerant distributed-DP
//! aggregation system and a deterministic simulator around them:
//!
//! - [`field`] / [`shamir`]: prime-field arithmetic and t-out-of-n secret
//!   sharing for seed and key bookkeeping;
//! - [`crypto`]: simulator-grade key agreement, authenticated encryption,
//!   signatures, and seeded pseudorandom expansion / noise sampling;
//! - [`noise`]: add-then-remove noise decomposition, excess levels, removal
//!   index sets, and collusion inflation;
//! - [`protocol`]: staged client/server state machines for plain masked
//!   aggregation and the noise-enforcing variant, with malicious-mode
//!   checks;
//! - [`accountant`]: Rényi-DP accounting under heterogeneous Poisson
//!   sampling, composition, translation, and offline noise planning;
//! - [`pipeline`]: chunked pipeline scheduling, optimal chunk counts, and
//!   latency-model profiling;
//! - [`harness`]: an end-to-end round orchestrator emitting JSON-lines
//!   metrics.

pub mod accountant;
pub mod codec;
pub mod crypto;
pub mod field;
pub mod harness;
pub mod net;
pub mod noise;
pub mod pipeline;
pub mod protocol;
pub mod shamir;
