//! Fallacy classification harness: dataset handling, prompt construction,
//! model dispatch, response parsing and scoring.

pub mod dataset;
pub mod gateway;
pub mod metrics;
pub mod model;
pub mod parser;
pub mod prompt;
pub mod runner;

pub use dataset::{
    attach_tones, balanced_sample, dataset_digest, load_pool, tone_distribution, BalancedSplit, DatasetError,
    DatasetPool, PoolFormat, Strictness,
};
pub use gateway::{
    ChatBackend, CompletionError, CompletionRequest, CompletionResult, Gateway, GatewayOptions, HttpBackend,
    MockBackend, TopKDialect, TopKStatus,
};
pub use metrics::{confusion, difference, report, ConfusionMatrix, DifferenceMatrix, EvalReport};
pub use model::{
    Condition, DomainError, EmotionalTone, FallacyLabel, Framework, RunConfig, Snippet, SnippetKey,
};
pub use parser::{parse, ParseError, ParseRoute, ParsedPrediction};
pub use prompt::{PromptError, PromptForge, PromptSpec};
pub use runner::{build_report, execute_grid, execute_run, RunError, RunManifest, RunRecord};
