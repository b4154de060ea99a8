//! Training data construction.
//!
//! A GRPO training instance pairs a query with 20 candidates: one judged
//! relevant document plus 19 negatives sampled from the first-stage run,
//! shuffled together. SFT pairs reuse the same instances with the
//! answer-only prompt and an `<answer>[k]</answer>` target.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::fnv1a;
use crate::corpus_io::{Document, DocumentStore, Qrels, Query, RankedList};
use crate::error::{FormatError, TrainDataError};
use crate::parse_reward::answer_span;
use crate::prompts::{build_prompt, PromptBudget, PromptMode};

pub const CANDIDATES_PER_INSTANCE: usize = 20;
pub const NEGATIVES_PER_INSTANCE: usize = CANDIDATES_PER_INSTANCE - 1;
/// Depth of the first-stage run negatives are drawn from.
pub const NEGATIVE_POOL_DEPTH: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub query_id: String,
    pub query_text: String,
    pub candidate_doc_ids: Vec<String>,
    /// 1-based position of the relevant document.
    pub gold_label: u32,
    pub seed_used: u64,
}

impl TrainingInstance {
    /// Structural invariants: 20 distinct candidates and a gold label in range.
    pub fn validate(&self) -> Result<(), TrainDataError> {
        let invalid = |message: String| TrainDataError::InvalidInstance {
            query_id: self.query_id.clone(),
            message,
        };
        if self.candidate_doc_ids.len() != CANDIDATES_PER_INSTANCE {
            return Err(invalid(format!(
                "expected {CANDIDATES_PER_INSTANCE} candidates, found {}",
                self.candidate_doc_ids.len()
            )));
        }
        if !(1..=CANDIDATES_PER_INSTANCE as u32).contains(&self.gold_label) {
            return Err(invalid(format!("gold label {} out of range", self.gold_label)));
        }
        let distinct: HashSet<&String> = self.candidate_doc_ids.iter().collect();
        if distinct.len() != self.candidate_doc_ids.len() {
            return Err(invalid("duplicate candidate documents".into()));
        }
        Ok(())
    }

    /// Checks that exactly one candidate is judged relevant and that it sits
    /// at the gold label.
    pub fn validate_against(&self, qrels: &Qrels) -> Result<(), TrainDataError> {
        self.validate()?;
        let relevant: Vec<usize> = self
            .candidate_doc_ids
            .iter()
            .enumerate()
            .filter(|(_, d)| qrels.relevance(&self.query_id, d).is_some_and(|r| r > 0))
            .map(|(i, _)| i + 1)
            .collect();
        if relevant != [self.gold_label as usize] {
            return Err(TrainDataError::InvalidInstance {
                query_id: self.query_id.clone(),
                message: format!("relevant positions {relevant:?}, gold label {}", self.gold_label),
            });
        }
        Ok(())
    }

    pub fn gold_doc_id(&self) -> &str {
        &self.candidate_doc_ids[self.gold_label as usize - 1]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SkipCounts {
    pub no_relevant: usize,
    pub relevant_not_in_corpus: usize,
    pub missing_query_text: usize,
    pub too_few_negatives: usize,
}

impl SkipCounts {
    pub fn total(&self) -> usize {
        self.no_relevant + self.relevant_not_in_corpus + self.missing_query_text + self.too_few_negatives
    }
}

#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    pub instances: Vec<TrainingInstance>,
    pub skipped: SkipCounts,
}

enum Skip {
    NoRelevant,
    RelevantNotInCorpus,
    MissingQueryText,
    TooFewNegatives,
}

/// Per-query seed: `seed XOR fnv1a(query_id)`.
pub fn query_seed(seed: u64, query_id: &str) -> u64 {
    seed ^ fnv1a(query_id.as_bytes())
}

fn build_one(
    list: &RankedList,
    qrels: &Qrels,
    queries: &HashMap<String, Query>,
    corpus: &DocumentStore,
    seed: u64,
) -> Result<TrainingInstance, Skip> {
    let judged = qrels.judgments(&list.query_id).ok_or(Skip::NoRelevant)?;
    let relevant: HashSet<&str> = judged
        .iter()
        .filter(|(_, r)| **r > 0)
        .map(|(d, _)| d.as_str())
        .collect();
    if relevant.is_empty() {
        return Err(Skip::NoRelevant);
    }
    let positive = judged
        .iter()
        .find(|(d, r)| **r > 0 && corpus.contains(d))
        .map(|(d, _)| d.clone())
        .ok_or(Skip::RelevantNotInCorpus)?;
    let query = queries.get(&list.query_id).ok_or(Skip::MissingQueryText)?;

    let pool: Vec<&str> = list
        .doc_ids()
        .take(NEGATIVE_POOL_DEPTH)
        .filter(|d| !relevant.contains(d) && corpus.contains(d))
        .collect();
    if pool.len() < NEGATIVES_PER_INSTANCE {
        return Err(Skip::TooFewNegatives);
    }

    let seed_used = query_seed(seed, &list.query_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed_used);
    let mut candidates: Vec<String> = rand::seq::index::sample(&mut rng, pool.len(), NEGATIVES_PER_INSTANCE)
        .into_iter()
        .map(|i| pool[i].to_string())
        .collect();
    candidates.push(positive.clone());
    candidates.shuffle(&mut rng);
    let gold_label = candidates
        .iter()
        .position(|d| *d == positive)
        .expect("positive inserted") as u32
        + 1;
    Ok(TrainingInstance {
        query_id: list.query_id.clone(),
        query_text: query.text.clone(),
        candidate_doc_ids: candidates,
        gold_label,
        seed_used,
    })
}

/// Builds one instance per usable query in `runs`. Queries that do not meet
/// the requirements are skipped and counted. Output order follows `runs`.
pub fn build_grpo_instances(
    qrels: &Qrels,
    runs: &[RankedList],
    queries: &HashMap<String, Query>,
    corpus: &DocumentStore,
    seed: u64,
) -> BuildReport {
    let results: Vec<Result<TrainingInstance, Skip>> = runs
        .par_iter()
        .map(|list| build_one(list, qrels, queries, corpus, seed))
        .collect();
    let mut report = BuildReport::default();
    for result in results {
        match result {
            Ok(instance) => report.instances.push(instance),
            Err(Skip::NoRelevant) => report.skipped.no_relevant += 1,
            Err(Skip::RelevantNotInCorpus) => report.skipped.relevant_not_in_corpus += 1,
            Err(Skip::MissingQueryText) => report.skipped.missing_query_text += 1,
            Err(Skip::TooFewNegatives) => report.skipped.too_few_negatives += 1,
        }
    }
    if report.skipped.total() > 0 {
        log::info!("skipped {} queries: {:?}", report.skipped.total(), report.skipped);
    }
    report
}

pub fn write_instances(instances: &[TrainingInstance], path: impl AsRef<Path>) -> Result<(), TrainDataError> {
    let path = path.as_ref();
    let io = |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for instance in instances {
        instance.validate()?;
        let line = serde_json::to_string(instance).expect("instances serialize");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(())
}

pub fn read_instances(path: impl AsRef<Path>) -> Result<Vec<TrainingInstance>, TrainDataError> {
    let path = path.as_ref();
    let io = |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut instances = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let instance: TrainingInstance = serde_json::from_str(&line).map_err(|e| FormatError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        instance.validate()?;
        instances.push(instance);
    }
    Ok(instances)
}

/// Supervised pair for answer-only fine-tuning. `answer_span` is the byte
/// range of `target` inside `full_text`, the only region a trainer should
/// compute loss on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub query_id: String,
    pub system: String,
    pub user: String,
    pub target: String,
    pub full_text: String,
    pub answer_span: [usize; 2],
}

/// Renders every instance as an answer-only prompt with its gold target.
pub fn build_sft_examples(
    instances: &[TrainingInstance],
    corpus: &DocumentStore,
    budget: Option<PromptBudget>,
) -> Result<Vec<SftExample>, TrainDataError> {
    instances
        .iter()
        .map(|instance| {
            instance.validate()?;
            let docs = instance
                .candidate_doc_ids
                .iter()
                .map(|d| corpus.get(d).ok_or_else(|| TrainDataError::MissingDocument(d.clone())))
                .collect::<Result<Vec<&Document>, _>>()?;
            let query = Query {
                id: instance.query_id.clone(),
                text: instance.query_text.clone(),
            };
            let prompt = build_prompt(&query, &docs, PromptMode::SetwisePlain, budget)?;
            let target = answer_span(instance.gold_label);
            let full_text = format!("{}\n\n{}\n\n{}", prompt.system, prompt.user, target);
            let start = full_text.len() - target.len();
            Ok(SftExample {
                query_id: instance.query_id.clone(),
                answer_span: [start, full_text.len()],
                system: prompt.system,
                user: prompt.user,
                target,
                full_text,
            })
        })
        .collect()
}

pub fn write_sft_examples(examples: &[SftExample], path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let io = |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for example in examples {
        let line = serde_json::to_string(example).expect("examples serialize");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}
