use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while loading or writing corpora, queries, qrels and runs.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("duplicate qrels entry for query `{query_id}`, document `{doc_id}`")]
    DuplicateQrel { query_id: String, doc_id: String },
    #[error("invalid run for query `{query_id}`: {message}")]
    InvalidRun { query_id: String, message: String },
}

/// Errors raised while rendering prompts.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("{0} candidates exceed the 20-slot prompt")]
    TooManyCandidates(usize),
    #[error("prompt budget of {budget} units leaves no room for documents (template costs {overhead})")]
    BudgetTooSmall { budget: usize, overhead: usize },
}

/// Errors raised by completion backends.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Response(String),
    #[error("backend returned {got} completions, expected {expected}")]
    ShortGroup { got: usize, expected: usize },
    #[error("invalid sampling parameters: {0}")]
    Params(String),
    #[error("scripted backend has no completion for this prompt")]
    ScriptExhausted,
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { .. } => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("gold label {gold} outside 1..={candidate_count}")]
    InvalidGold { gold: u32, candidate_count: u32 },
}

/// Errors raised by setwise reranking.
#[derive(Debug, Error)]
pub enum RerankError {
    #[error("invalid rerank configuration: {0}")]
    Config(String),
    #[error("a selector call needs 2..=20 documents, got {0}")]
    CompareSetSize(usize),
    #[error("document `{0}` not found in corpus")]
    MissingDocument(String),
    #[error("no query text for query `{0}`")]
    MissingQuery(String),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Errors raised by the GRPO objective and training loop.
#[derive(Debug, Error, PartialEq)]
pub enum GrpoError {
    #[error("empty rollout group")]
    EmptyGroup,
    #[error("group has {got} samples, config expects {expected}")]
    GroupSizeMismatch { got: usize, expected: usize },
    #[error("policy ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("invalid GRPO configuration: {0}")]
    Config(String),
    #[error("non-finite gradient at step {step}, coordinate {coord}: {value}")]
    NonFiniteGradient { step: usize, coord: usize, value: f64 },
}

/// Errors raised while building or reading training data.
#[derive(Debug, Error)]
pub enum TrainDataError {
    #[error("invalid training instance for query `{query_id}`: {message}")]
    InvalidInstance { query_id: String, message: String },
    #[error("document `{0}` not found in corpus")]
    MissingDocument(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Format(#[from] FormatError),
}
