//! Dataloom synthesizes, verifies, and packages instruction-tuning
//! conversations.
//!
//! The pipeline is organized around declarative generator graphs: nodes
//! state the payload fields they require and guarantee, edges are inferred
//! from those conditions, and each datapoint is produced by a seeded random
//! walk from the graph source to its target. Downstream stages score
//! candidate generations against programmatic verifiers, enforce reasoning
//! length budgets with selective loss masks, and pack the surviving samples
//! into fixed-context bins.
//!
//! Every model call goes through [`gateway::Gateway`], which supports
//! record/replay transports so full pipeline runs are reproducible
//! byte-for-byte in tests and audits.

pub mod budget;
pub mod config;
pub mod conversation;
pub mod dataflow;
pub mod dataset;
pub mod gateway;
pub mod graph;
pub mod pack;
pub mod pipeline;
pub mod reasoning;
pub mod seed;
pub mod stub;
pub mod synth;
pub mod verify;
