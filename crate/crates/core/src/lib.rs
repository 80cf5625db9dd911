//! Black-box interventional concept attribution for image classifiers.
//!
//! For each image the engine classifies once, asks a proposer for free-text
//! concepts, grounds each to a mask, removes it with an editor, reclassifies
//! and records the confidence drop on the original prediction. Evidence
//! records feed per-image metrics, a typed evidence graph with Turtle
//! export and consistency checks, knowledge payloads and a progressive
//! ablation study. Every model operator sits behind a backend trait with
//! fixture, synthetic, subprocess and HTTP implementations; the synthetic
//! world doubles as an exact causal oracle.

pub mod adapters;
pub mod domain;
pub mod exec;
pub mod metrics;
pub mod synthetic;
pub mod engine;
pub mod ontology;
pub mod reporting;
