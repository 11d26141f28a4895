//! BDH / BDH-GPU workbench.
//!
//! The crate is organized around the lifecycle of a BDH-GPU model:
//!
//! * [`tensor`] — dense f32 tensors, the fixed op set of the architecture,
//!   and a reverse-mode gradient tape over that op set.
//! * [`model`] — the BDH-GPU architecture itself: parameters, token-parallel
//!   forward, streaming forward with per-layer attention state, generation
//!   and model concatenation.
//! * [`kernel`] — the equivalent local graph dynamics: sparse graphs, the
//!   four-phase synapse ruleset, the dense state-space oracle and the
//!   circuit constructions relating the two forms.
//! * [`train`] — TBPTT training loop, AdamW, synthetic task streams and the
//!   interleaved translation corpus format.
//! * [`analysis`] — graph extraction, modularity, synapse-state probing,
//!   sparsity traces and the claim-level micro-experiments.
//! * [`checkpoint`] / [`runconfig`] — binary checkpoints and JSON run configs.

pub mod analysis;
pub mod checkpoint;
pub mod kernel;
pub mod model;
pub mod rng;
pub mod runconfig;
pub mod tensor;
pub mod train;
