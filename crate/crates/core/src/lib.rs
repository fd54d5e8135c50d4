//! Experiment harness for classifying cognitive status from picture-description
//! transcripts with large language models.
//!
//! The pieces, roughly in pipeline order:
//!
//! * [`corpus`]: manifest loading, stratified splits, partition summaries
//! * [`embedding`]: per-subject vectors, cosine similarity, class centroids
//! * [`selection`]: class-balanced few-shot demonstration policies
//! * [`prompt`]: byte-exact prompt templates
//! * [`gateway`]: completion backends (HTTP and offline mocks) and label parsing
//! * [`runner`]: zero-shot, few-shot, reasoning, self-consistency, tree-of-thought
//!   and token-probability strategies
//! * [`metrics`], [`stats`], [`linguistics`]: scoring and error analysis
//! * [`experiment`]: config-driven runs and reports

pub mod corpus;
pub mod embedding;
pub mod experiment;
pub mod gateway;
pub mod label;
pub mod linguistics;
pub mod metrics;
pub mod prompt;
pub mod rng;
pub mod runner;
pub mod selection;
pub mod stats;

pub use corpus::{load_corpus, partition_summary, stratified_split, PartitionSummary, Split, SubjectRecord};
pub use embedding::{class_centroid, cosine_similarity, EmbeddingStore, EmbeddingVector};
pub use experiment::{cmd_error_analysis, cmd_report, cmd_run, ExperimentConfig, ExperimentError};
pub use gateway::{
    parse_label, parse_tot_consensus, CompletionRequest, CompletionResponse, Gateway, ParsedLabel, TotVariant,
};
pub use label::{Label, Prediction};
pub use linguistics::{LinguisticProfile, TaggedToken, TokenStream};
pub use metrics::{auc_roc, f1_for_class, ConfusionCounts};
pub use prompt::{render, PromptKind, ReasonedDemonstration, RenderedPrompt};
pub use runner::{classify_from_token_probs, PredictionRecord, StrategySpec};
pub use selection::{select_demonstrations, DemonstrationSet, SelectionPolicy};
pub use stats::{mann_whitney_u_two_sided, UTestResult};
