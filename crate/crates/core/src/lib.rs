//! Reasoning setwise reranking and GRPO training.
//!
//! - [`corpus_io`] — corpus, query, qrels and TREC run files
//! - [`prompts`] — setwise prompts with and without a reasoning instruction
//! - [`backend`] — completion backends (OpenAI-compatible HTTP and deterministic mocks)
//! - [`parse_reward`] — think/answer parsing and the binary reward
//! - [`setwise`] — heapsort reranking driven by a most-relevant selector
//! - [`grpo`] — group-normalized advantages, clipped objective, KL penalty, training step
//! - [`toy_env`] — synthetic selection tasks and an exactly differentiable policy
//! - [`traindata`] — training instances and SFT pairs from qrels, runs and a corpus
//! - [`metrics`] — nDCG@k
//! - [`config`] — JSON training/inference configuration

pub mod backend;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod grpo;
pub mod metrics;
pub mod parse_reward;
pub mod prompts;
pub mod setwise;
pub mod toy_env;
pub mod traindata;

pub use backend::{Completion, CompletionBackend, FinishReason, SamplingParams};
pub use corpus_io::{Document, DocumentStore, Qrels, Query, RankedList, RunEntry};
pub use error::{BackendError, FormatError, GrpoError, PromptError, RerankError, RewardError, TrainDataError};
pub use grpo::{GroupSample, GrpoConfig, ObjectiveMode, StepStats};
pub use parse_reward::{FormatFailure, Parsed, ParsedAnswer};
pub use prompts::{BudgetUnit, PromptBudget, PromptMode, RenderedPrompt};
pub use setwise::{RerankConfig, RerankOutcome, SelectorDecision};
pub use toy_env::{SyntheticTask, ToyPolicy, ToyTrainConfig};
pub use traindata::{SftExample, TrainingInstance};
