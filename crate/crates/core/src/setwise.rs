//! Setwise heapsort reranking.
//!
//! The first-stage list is arranged as a c-ary max-heap. Every heapify step
//! shows a parent and up to c children to the selector in one prompt and
//! swaps the parent with whichever child the selector names. Popping the root
//! k times yields the reranked head; the rest keep first-stage order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backend::{complete, Completion, CompletionBackend, SamplingParams};
use crate::corpus_io::{Document, DocumentStore, Query, RankedList, RunEntry};
use crate::error::RerankError;
use crate::parse_reward::parse_completion;
use crate::prompts::{build_prompt, PromptBudget, PromptMode, MAX_CANDIDATES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    /// Depth of the first-stage list that is reranked; deeper entries are
    /// appended unchanged.
    pub top_n_in: usize,
    pub top_k_out: usize,
    /// Children per heap node; one selector call sees `heap_arity + 1` documents.
    pub heap_arity: usize,
    pub mode: PromptMode,
    /// Extra attempts per comparison when the completion is unusable.
    pub retry_on_failure: usize,
    pub budget: Option<PromptBudget>,
    pub sampling: SamplingParams,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            top_n_in: 100,
            top_k_out: 10,
            heap_arity: MAX_CANDIDATES - 1,
            mode: PromptMode::RankR1,
            retry_on_failure: 1,
            budget: None,
            sampling: SamplingParams::greedy(),
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<(), RerankError> {
        if self.heap_arity == 0 || self.heap_arity + 1 > MAX_CANDIDATES {
            return Err(RerankError::Config(format!(
                "heap arity must be in 1..={}, got {}",
                MAX_CANDIDATES - 1,
                self.heap_arity
            )));
        }
        if self.top_n_in == 0 {
            return Err(RerankError::Config("top_n_in must be at least 1".into()));
        }
        if self.top_k_out > self.top_n_in {
            return Err(RerankError::Config(format!(
                "top_k_out ({}) exceeds top_n_in ({})",
                self.top_k_out, self.top_n_in
            )));
        }
        if self.sampling.group_size != 1 {
            return Err(RerankError::Config(
                "reranking samples exactly one completion per call".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectorDecision {
    /// Position within the compared set; 0 is the first document shown.
    pub chosen_index: usize,
    pub raw: Completion,
    pub fallback_used: bool,
}

/// Asks the selector for the most relevant of `docs`. Unusable completions are
/// retried `config.retry_on_failure` times, after which the first document
/// (the incumbent heap parent) is kept.
pub fn select_most_relevant(
    query: &Query,
    docs: &[&Document],
    backend: &dyn CompletionBackend,
    config: &RerankConfig,
) -> Result<SelectorDecision, RerankError> {
    if docs.len() < 2 || docs.len() > MAX_CANDIDATES {
        return Err(RerankError::CompareSetSize(docs.len()));
    }
    let prompt = build_prompt(query, docs, config.mode, config.budget)?;
    let mut last = None;
    for attempt in 0..=config.retry_on_failure {
        let completion = complete(backend, &prompt, &config.sampling)?
            .pop()
            .expect("complete() returns exactly group_size completions");
        let label = parse_completion(&completion.text, config.mode)
            .label()
            .map(|l| l as usize)
            .filter(|l| (1..=docs.len()).contains(l));
        if let Some(label) = label {
            return Ok(SelectorDecision {
                chosen_index: label - 1,
                raw: completion,
                fallback_used: false,
            });
        }
        log::debug!(
            "query {}: unusable selector output on attempt {}: {:?}",
            query.id,
            attempt + 1,
            completion.text
        );
        last = Some(completion);
    }
    Ok(SelectorDecision {
        chosen_index: 0,
        raw: last.expect("at least one attempt"),
        fallback_used: true,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub ranked: RankedList,
    pub selector_calls: usize,
    pub fallbacks: usize,
}

struct Heap<'a> {
    query: &'a Query,
    docs: Vec<&'a Document>,
    /// Heap slots holding indices into `docs`.
    slots: Vec<usize>,
    backend: &'a dyn CompletionBackend,
    config: &'a RerankConfig,
    calls: usize,
    fallbacks: usize,
}

impl Heap<'_> {
    fn sift_down(&mut self, mut node: usize, size: usize) -> Result<(), RerankError> {
        let arity = self.config.heap_arity;
        loop {
            let first = arity * node + 1;
            if first >= size {
                return Ok(());
            }
            let last = (first + arity).min(size);
            let compared: Vec<&Document> = std::iter::once(self.slots[node])
                .chain(self.slots[first..last].iter().copied())
                .map(|i| self.docs[i])
                .collect();
            let decision = select_most_relevant(self.query, &compared, self.backend, self.config)?;
            self.calls += 1;
            self.fallbacks += usize::from(decision.fallback_used);
            if decision.chosen_index == 0 {
                return Ok(());
            }
            let child = first + decision.chosen_index - 1;
            self.slots.swap(node, child);
            node = child;
        }
    }
}

/// Reranks `initial` for `query`. Output scores are `(N - r + 1) / N` for
/// rank `r`, so the result is a valid run.
pub fn rerank(
    query: &Query,
    initial: &RankedList,
    store: &DocumentStore,
    backend: &dyn CompletionBackend,
    config: &RerankConfig,
) -> Result<RerankOutcome, RerankError> {
    config.validate()?;
    let total = initial.len();
    let depth = total.min(config.top_n_in);
    let docs = initial.entries[..depth]
        .iter()
        .map(|e| {
            store
                .get(&e.doc_id)
                .ok_or_else(|| RerankError::MissingDocument(e.doc_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut heap = Heap {
        query,
        docs,
        slots: (0..depth).collect(),
        backend,
        config,
        calls: 0,
        fallbacks: 0,
    };
    if depth > 1 {
        let last_parent = (depth - 2) / config.heap_arity;
        for node in (0..=last_parent).rev() {
            heap.sift_down(node, depth)?;
        }
    }

    let k = config.top_k_out.min(depth);
    let mut order = Vec::with_capacity(total);
    let mut size = depth;
    for popped in 0..k {
        order.push(heap.slots[0]);
        if popped + 1 == k {
            break;
        }
        size -= 1;
        heap.slots.swap(0, size);
        heap.sift_down(0, size)?;
    }
    let mut head = vec![false; total];
    for &i in &order {
        head[i] = true;
    }
    order.extend((0..total).filter(|i| !head[*i]));

    let n = total as f64;
    let entries = order
        .iter()
        .enumerate()
        .map(|(r, &i)| RunEntry {
            doc_id: initial.entries[i].doc_id.clone(),
            rank: r as u32 + 1,
            score: (n - r as f64) / n,
        })
        .collect();
    Ok(RerankOutcome {
        ranked: RankedList {
            query_id: initial.query_id.clone(),
            entries,
        },
        selector_calls: heap.calls,
        fallbacks: heap.fallbacks,
    })
}

fn depth_of(mut node: usize, arity: usize) -> usize {
    let mut depth = 0;
    while node > 0 {
        node = (node - 1) / arity;
        depth += 1;
    }
    depth
}

/// Upper bound on selector calls for reranking `n` documents to depth `k`:
/// each build-phase sift from node i costs at most `height - depth(i)` calls
/// and each extraction sift at most `height`.
pub fn max_selector_calls(n: usize, arity: usize, k: usize) -> usize {
    if n <= 1 || arity == 0 {
        return 0;
    }
    let height = depth_of(n - 1, arity);
    let last_parent = (n - 2) / arity;
    let build: usize = (0..=last_parent).map(|i| height - depth_of(i, arity)).sum();
    build + k.min(n) * height
}

/// Reranks every list in `runs` on a pool of `concurrency` workers. Results
/// come back in the order of `runs`.
pub fn rerank_all(
    queries: &HashMap<String, Query>,
    runs: &[RankedList],
    store: &DocumentStore,
    backend: &dyn CompletionBackend,
    config: &RerankConfig,
    concurrency: usize,
) -> Result<Vec<RerankOutcome>, RerankError> {
    use rayon::prelude::*;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| RerankError::Pool(e.to_string()))?;
    pool.install(|| {
        runs.par_iter()
            .map(|list| {
                let query = queries
                    .get(&list.query_id)
                    .ok_or_else(|| RerankError::MissingQuery(list.query_id.clone()))?;
                rerank(query, list, store, backend, config)
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{PreferenceBackend, ScriptedBackend};

    fn fixture(n: usize) -> (Query, DocumentStore, RankedList) {
        let store: DocumentStore = (0..n)
            .map(|i| Document {
                id: format!("d{i}"),
                text: format!("passage number {i}"),
            })
            .collect();
        let list = RankedList::from_ordered("q1", (0..n).map(|i| (format!("d{i}"), (n - i) as f64))).unwrap();
        let query = Query {
            id: "q1".into(),
            text: "which passage".into(),
        };
        (query, store, list)
    }

    fn ids(list: &RankedList) -> Vec<&str> {
        list.doc_ids().collect()
    }

    #[test]
    fn select_maps_label_to_index() {
        let (query, store, _) = fixture(3);
        let docs: Vec<&Document> = ["d0", "d1", "d2"].iter().map(|d| store.get(d).unwrap()).collect();
        let backend = ScriptedBackend::new().with_queue(["<think>b looks best</think><answer>[2]</answer>"]);
        let decision = select_most_relevant(&query, &docs, &backend, &RerankConfig::default()).unwrap();
        assert_eq!(decision.chosen_index, 1);
        assert!(!decision.fallback_used);
    }

    #[test]
    fn select_needs_two_documents() {
        let (query, store, _) = fixture(1);
        let docs = [store.get("d0").unwrap()];
        let err = select_most_relevant(&query, &docs, &ScriptedBackend::new(), &RerankConfig::default());
        assert!(matches!(err, Err(RerankError::CompareSetSize(1))));
    }

    #[test]
    fn garbage_falls_back_to_incumbent() {
        let (query, store, _) = fixture(3);
        let docs: Vec<&Document> = ["d0", "d1", "d2"].iter().map(|d| store.get(d).unwrap()).collect();
        let backend = ScriptedBackend::new().with_queue(["no idea", "<answer>[7]</answer>", "unused"]);
        let decision = select_most_relevant(&query, &docs, &backend, &RerankConfig::default()).unwrap();
        assert_eq!(decision.chosen_index, 0);
        assert!(decision.fallback_used);
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn retry_recovers() {
        let (query, store, _) = fixture(2);
        let docs: Vec<&Document> = ["d0", "d1"].iter().map(|d| store.get(d).unwrap()).collect();
        let backend = ScriptedBackend::new().with_queue(["oops", "<think>x</think><answer>[2]</answer>"]);
        let decision = select_most_relevant(&query, &docs, &backend, &RerankConfig::default()).unwrap();
        assert_eq!((decision.chosen_index, decision.fallback_used), (1, false));
    }

    #[test]
    fn single_document_is_identity() {
        let (query, store, list) = fixture(1);
        let backend = ScriptedBackend::new();
        let out = rerank(&query, &list, &store, &backend, &RerankConfig::default()).unwrap();
        assert_eq!(ids(&out.ranked), ["d0"]);
        assert_eq!(out.selector_calls, 0);
        assert_eq!(out.ranked.entries[0].score, 1.0);
    }

    #[test]
    fn full_sort_with_hidden_scores() {
        let (query, store, list) = fixture(8);
        let hidden = [3.0, 9.0, 1.0, 7.0, 5.0, 8.0, 2.0, 6.0];
        let backend = PreferenceBackend::new(hidden.iter().enumerate().map(|(i, s)| (format!("d{i}"), *s)));
        let config = RerankConfig {
            heap_arity: 3,
            top_k_out: 8,
            ..RerankConfig::default()
        };
        let out = rerank(&query, &list, &store, &backend, &config).unwrap();
        assert_eq!(ids(&out.ranked), ["d1", "d5", "d3", "d7", "d4", "d0", "d6", "d2"]);
        assert_eq!(out.selector_calls, backend.calls());
        assert!(out.selector_calls <= max_selector_calls(8, 3, 8));
        out.ranked.validate().unwrap();
    }

    #[test]
    fn tail_keeps_first_stage_order() {
        let (query, store, list) = fixture(6);
        let backend = PreferenceBackend::new([("d4", 10.0), ("d2", 9.0)]);
        let config = RerankConfig {
            heap_arity: 2,
            top_k_out: 2,
            ..RerankConfig::default()
        };
        let out = rerank(&query, &list, &store, &backend, &config).unwrap();
        assert_eq!(ids(&out.ranked), ["d4", "d2", "d0", "d1", "d3", "d5"]);
        let scores: Vec<f64> = out.ranked.entries.iter().map(|e| e.score).collect();
        let expected: Vec<f64> = (1..=6).map(|r| (6 - r + 1) as f64 / 6.0).collect();
        assert_eq!(scores, expected);
    }

    #[test]
    fn entries_beyond_depth_are_appended() {
        let (query, store, list) = fixture(5);
        let backend = PreferenceBackend::new([("d2", 1.0), ("d4", 5.0)]);
        let config = RerankConfig {
            top_n_in: 3,
            top_k_out: 1,
            heap_arity: 2,
            ..RerankConfig::default()
        };
        let out = rerank(&query, &list, &store, &backend, &config).unwrap();
        assert_eq!(ids(&out.ranked), ["d2", "d0", "d1", "d3", "d4"]);
    }

    #[test]
    fn config_bounds() {
        let bad = [
            RerankConfig {
                heap_arity: 20,
                ..RerankConfig::default()
            },
            RerankConfig {
                heap_arity: 0,
                ..RerankConfig::default()
            },
            RerankConfig {
                top_k_out: 101,
                ..RerankConfig::default()
            },
        ];
        for config in bad {
            assert!(matches!(config.validate(), Err(RerankError::Config(_))));
        }
        RerankConfig::default().validate().unwrap();
    }

    #[test]
    fn missing_document_is_an_error() {
        let (query, _, list) = fixture(3);
        let store = DocumentStore::new();
        let err = rerank(&query, &list, &store, &ScriptedBackend::new(), &RerankConfig::default());
        assert!(matches!(err, Err(RerankError::MissingDocument(_))));
    }

    #[test]
    fn call_bound_small_cases() {
        // Binary heap of 7: height 2, build sifts at nodes 2,1 (1 call each) and 0 (2 calls).
        assert_eq!(max_selector_calls(7, 2, 0), 4);
        assert_eq!(max_selector_calls(7, 2, 3), 4 + 3 * 2);
        assert_eq!(max_selector_calls(1, 19, 1), 0);
        // 20 documents with arity 19 fit in a single comparison at the root.
        assert_eq!(max_selector_calls(20, 19, 1), 1 + 1);
    }
}
