//! Empirical methodology over trained models: graph extraction and
//! modularity, degree laws, synapse-state reconstruction and probing,
//! concept tests with rank statistics, sparsity traces, and the claim-level
//! micro-experiments.

mod concept;
mod experiments;
mod ffn;
mod modularity;
mod sigma;
mod sparsity;
pub(crate) mod stats;

pub use concept::{find_concept_synapses, mann_whitney_u, ConceptTestResult, RankedSynapse};
pub use experiments::{
    attention_capacity_experiment, fscore_experiment, lsh_bucketize, lsh_random_directions,
    markov_lowrank_experiment, KeyMode, MarkovLowrankResult,
};
pub use ffn::{
    degree_distribution, element_histogram, extract_ffn_graph, threshold_graph, DecoderKind,
    DegreeDistribution, ElementHistogram, LogBin,
};
pub use modularity::{
    louvain, modularity, partition_agreement, random_baseline_graphs, sbm_graph,
    ModularityReport,
};
pub use sigma::{filter_sigma, probe_synapse, reconstruct_sigma, SynapseTrace};
pub use sparsity::{sparsity_trace, SparsityTrace};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Kernel(#[from] crate::kernel::KernelError),
}
