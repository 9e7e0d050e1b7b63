//! Script-knowledge graphs, commonsense MCQA generation and direct-effect
//! path patching.
//!
//! The pipeline runs corpus → [`graph`] → [`sampler`] → [`querygen`], with
//! [`evalharness`] scoring model responses and [`patchlab`] localizing the
//! decision inside a residual model.

pub mod corpus;
pub mod evalharness;
pub mod graph;
pub mod oracle;
pub mod patchlab;
pub mod querygen;
pub mod sampler;
pub mod seed;
pub mod selftest;

pub use corpus::{
    load_corpus, parse_corpus, save_corpus, validate_corpus, CorpusError, Diagnostic, DiagnosticCode, Esd,
    EventStep, ScenarioCorpus, Severity,
};
pub use evalharness::{score, score_records, EvalError, EvalRecord, SuccessReport};
pub use graph::{
    build_graph, build_graph_with, count_esds, count_paths, graph_stats, trajectory_entropy, BigCount,
    BuildOptions, ClusterNode, CompactGraph, GraphError, Realization, StatsReport,
};
pub use patchlab::{ActivationCache, DirectEffectCurve, ModelConfig, ModelError, ToyResidualModel};
pub use querygen::{
    generate_dataset, make_conjugate_pair, render_query, CommonsenseQuery, ConjugatePair, ExportConfig,
    PromptTemplate, QueryError,
};
pub use sampler::{
    find_conjugate_trajectory, sample_distractor, sample_trajectory, split_at, DistractorPolicy, SamplerError,
    SplitSample, Trajectory,
};
pub use seed::{derive_seed, SeedStream};
