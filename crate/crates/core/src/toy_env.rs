//! Synthetic most-relevant-selection tasks and a softmax-linear policy.
//!
//! Each task has `n` candidates with feature vectors; the gold label is the
//! candidate scoring highest under hidden weights. The policy scores
//! candidates with its own weights, samples a label from the softmax and
//! emits it as a think/answer completion, so rewards flow through the same
//! parser used for real model output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backend::Completion;
use crate::corpus_io::{Document, Query};
use crate::error::GrpoError;
use crate::grpo::{train_step, ExactPolicy, GroupSample, GrpoConfig, Rollout, StepStats};
use crate::parse_reward::{compute_reward, parse_completion};
use crate::prompts::{build_prompt, PromptMode, RenderedPrompt, MAX_CANDIDATES};

/// Fixed reasoning text of every toy completion.
pub const TOY_THINK: &str = "scores computed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    /// Row `i` holds the features of candidate label `i + 1`.
    pub features: Vec<Vec<f64>>,
    pub gold_label: u32,
    /// The task rendered as a real setwise prompt over templated documents.
    pub prompt: RenderedPrompt,
}

impl SyntheticTask {
    pub fn n_candidates(&self) -> usize {
        self.features.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub hidden_weights: Vec<f64>,
    pub tasks: Vec<SyntheticTask>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// First index of the maximum.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn render_task(index: usize, features: &[Vec<f64>]) -> RenderedPrompt {
    let query = Query {
        id: format!("toy-{index}"),
        text: "pick the candidate with the highest hidden relevance".into(),
    };
    let docs: Vec<Document> = features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let values: Vec<String> = f.iter().map(|v| format!("{v:.3}")).collect();
            Document {
                id: format!("toy-{index}-c{}", i + 1),
                text: format!("features [{}]", values.join(", ")),
            }
        })
        .collect();
    let refs: Vec<&Document> = docs.iter().collect();
    build_prompt(&query, &refs, PromptMode::RankR1, None).expect("toy tasks have 2..=20 candidates")
}

/// Deterministic task set: a unit-norm hidden weight vector and `count` tasks
/// with i.i.d. standard normal features.
///
/// # Panics
/// If `n_candidates` is outside `2..=20` or `dim` is 0.
pub fn make_tasks(seed: u64, count: usize, n_candidates: usize, dim: usize) -> TaskSet {
    assert!(
        (2..=MAX_CANDIDATES).contains(&n_candidates),
        "n_candidates must be in 2..=20, got {n_candidates}"
    );
    assert!(dim > 0, "feature dimension must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hidden: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dot(&hidden, &hidden).sqrt();
    hidden.iter_mut().for_each(|w| *w /= norm);

    let tasks = (0..count)
        .map(|index| {
            let features: Vec<Vec<f64>> = (0..n_candidates)
                .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            let scores: Vec<f64> = features.iter().map(|f| dot(f, &hidden)).collect();
            let gold_label = argmax(&scores) as u32 + 1;
            let prompt = render_task(index, &features);
            SyntheticTask {
                features,
                gold_label,
                prompt,
            }
        })
        .collect();
    TaskSet {
        hidden_weights: hidden,
        tasks,
    }
}

/// `pi(k | task) = softmax(features · weights)_k`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub weights: Vec<f64>,
}

impl ToyPolicy {
    /// All-zero weights: uniform over candidates.
    pub fn uniform(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
        }
    }

    pub fn log_probs(&self, task: &SyntheticTask) -> Vec<f64> {
        let logits: Vec<f64> = task.features.iter().map(|f| dot(f, &self.weights)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.iter().map(|l| l - log_z).collect()
    }

    pub fn probs(&self, task: &SyntheticTask) -> Vec<f64> {
        self.log_probs(task).into_iter().map(f64::exp).collect()
    }

    /// Samples a 0-based candidate index.
    pub fn sample(&self, task: &SyntheticTask, rng: &mut impl Rng) -> usize {
        let probs = self.probs(task);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding left `acc` just below 1; take the last candidate with mass.
        probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
    }

    pub fn completion_text(action: usize) -> String {
        crate::parse_reward::render_completion(TOY_THINK, action as u32 + 1, PromptMode::RankR1)
    }
}

impl ExactPolicy for ToyPolicy {
    type Task = SyntheticTask;

    fn params(&self) -> &[f64] {
        &self.weights
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn log_prob(&self, task: &SyntheticTask, action: usize) -> f64 {
        self.log_probs(task)[action]
    }

    fn accumulate_grad_log_prob(&self, task: &SyntheticTask, action: usize, scale: f64, out: &mut [f64]) {
        // d log softmax_k / dw = x_k - sum_j pi_j x_j
        let probs = self.probs(task);
        for (j, (f, p)) in task.features.iter().zip(&probs).enumerate() {
            let coef = if j == action { 1.0 - p } else { -p };
            for (o, x) in out.iter_mut().zip(f) {
                *o += scale * coef * x;
            }
        }
    }
}

/// Samples `group_size` completions for `task` from `policy`. Rewards come
/// from parsing the emitted text; `logp_old == logp_new` at sampling time.
pub fn policy_group_rollout(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    task: &SyntheticTask,
    group_size: usize,
    rng: &mut impl Rng,
) -> Vec<Rollout> {
    let logp = policy.log_probs(task);
    let logp_ref = reference.log_probs(task);
    let n = task.n_candidates() as u32;
    (0..group_size)
        .map(|_| {
            let action = policy.sample(task, rng);
            let completion = Completion::stop(ToyPolicy::completion_text(action));
            let parsed = parse_completion(&completion.text, task.prompt.mode);
            let reward = compute_reward(&parsed, task.gold_label, n).expect("gold label within 1..=n");
            Rollout {
                action,
                sample: GroupSample {
                    completion,
                    reward: f64::from(reward),
                    advantage: 0.0,
                    logp_new: logp[action],
                    logp_old: logp[action],
                    logp_ref: logp_ref[action],
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub seed: u64,
    pub steps: usize,
    /// Size of the fixed task pool prompts are drawn from.
    pub num_tasks: usize,
    pub n_candidates: usize,
    pub dim: usize,
    pub grpo: GrpoConfig,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 2000,
            num_tasks: 1024,
            n_candidates: 20,
            dim: 8,
            grpo: GrpoConfig {
                learning_rate: 0.2,
                batch_size: 16,
                ..GrpoConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyTrainReport {
    pub policy: ToyPolicy,
    pub stats: Vec<StepStats>,
}

/// Trains a uniform-initialized policy with GRPO on a synthetic task pool.
/// The reference policy is the initial one. `on_step` sees each step's stats
/// as they are produced.
pub fn train_toy(config: &ToyTrainConfig, mut on_step: impl FnMut(&StepStats)) -> Result<ToyTrainReport, GrpoError> {
    config.grpo.validate()?;
    if config.num_tasks == 0 {
        return Err(GrpoError::Config("num_tasks must be at least 1".into()));
    }
    if !(2..=MAX_CANDIDATES).contains(&config.n_candidates) || config.dim == 0 {
        return Err(GrpoError::Config(format!(
            "need 2..=20 candidates and a positive dimension, got {} and {}",
            config.n_candidates, config.dim
        )));
    }
    let set = make_tasks(config.seed, config.num_tasks, config.n_candidates, config.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let reference = ToyPolicy::uniform(config.dim);
    let mut policy = reference.clone();
    let mut stats = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch: Vec<&SyntheticTask> = (0..config.grpo.batch_size)
            .map(|_| &set.tasks[rng.random_range(0..set.tasks.len())])
            .collect();
        let s = train_step(&mut policy, &batch, &config.grpo, step, |p, task| {
            policy_group_rollout(p, &reference, task, config.grpo.group_size, &mut rng)
        })?;
        on_step(&s);
        stats.push(s);
    }
    Ok(ToyTrainReport { policy, stats })
}

/// Trailing moving average with window `window`; element `i` averages
/// `values[i + 1 - window ..= i]`.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}
