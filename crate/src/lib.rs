//! Hybrid hierarchical federated learning over secret shares.
//!
//! Clients never see the model: they secret-share their data to small MPC
//! committees ("clusters") that train locally on the pooled shares, and a
//! global committee aggregates the resulting models while they stay shared.
//! The crate provides the full desk-scale pipeline:
//!
//! * [`fixed`] — 64-bit ring fixed-point arithmetic (encode, truncating
//!   multiply, wrapping add),
//! * [`sharing`] — additive secret sharing with two interchangeable
//!   backends and a communication/comparison cost meter,
//! * [`nn`] — from-scratch neural-network training over a pluggable
//!   numeric backend (float64 or fixed-point),
//! * [`data`] — IDX datasets, client sharding, per-cluster data pools,
//! * [`attacks`] — label-flipping data poisoning and attacker placement,
//! * [`agg`] — FedAvg, oblivious trimmed mean, its sampled low-cost
//!   variant, and trust-score weighted aggregation,
//! * [`orchestrator`] — the round loop tying the layers together,
//! * [`config`] / [`scenario`] / [`metrics`] — experiment plumbing.
//!
//! Start with the runnable examples (`cargo run --release -p hyfl
//! --example secret_sharing`, `... --example hyfl_round`, and friends);
//! each one demonstrates a single capability end to end.

pub mod agg;
pub mod attacks;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fixed;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod rng;
pub mod scenario;
pub mod sharing;
pub mod verify;

pub use error::{Error, Result};
