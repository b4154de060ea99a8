//! Group Relative Policy Optimization.
//!
//! For a group of `G` rollouts sampled from the old policy, each with reward
//! `r_i`, the group-normalized advantage is
//!
//! ```text
//! A_i = (r_i - mean(r)) / max(std(r), std_floor)        (population std)
//! ```
//!
//! and the objective maximized is
//!
//! ```text
//! full:        1/G * sum_i [ min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i) - beta KL_i ]
//! simplified:  1/G * sum_i [ rho_i A_i - beta KL_i ]
//! rho_i = exp(logp_new_i - logp_old_i)
//! KL_i  = exp(d) - d - 1,  d = logp_ref_i - logp_new_i
//! ```
//!
//! With a single update per batch the new and old policies coincide at the
//! sampling point (`rho_i = 1`), where both forms agree.

use serde::{Deserialize, Serialize};

use crate::backend::Completion;
use crate::error::GrpoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMode {
    /// Clipped ratio objective.
    Full,
    /// Unclipped ratio objective for single-update training.
    #[default]
    Simplified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    /// Prompts per update.
    pub batch_size: usize,
    pub std_floor: f64,
    pub objective_mode: ObjectiveMode,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.04,
            learning_rate: 1e-5,
            batch_size: 64,
            std_floor: 1e-8,
            objective_mode: ObjectiveMode::Simplified,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |msg: String| Err(GrpoError::Config(msg));
        if self.group_size < 2 {
            return bad(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("clip_eps must lie in (0, 1), got {}", self.clip_eps));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad(format!("kl_beta must be finite and non-negative, got {}", self.kl_beta));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.std_floor.is_nan() || self.std_floor < 0.0 {
            return bad(format!("std_floor must be non-negative, got {}", self.std_floor));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub completion: Completion,
    pub reward: f64,
    pub advantage: f64,
    pub logp_new: f64,
    pub logp_old: f64,
    pub logp_ref: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
fn population_std(xs: &[f64], mean: f64) -> f64 {
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Group-normalized advantages. A group whose rewards are all equal carries no
/// learning signal and gets exactly zero advantages.
pub fn normalize_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, GrpoError> {
    let Some(first) = rewards.first() else {
        return Err(GrpoError::EmptyGroup);
    };
    if rewards.iter().all(|r| r == first) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let m = mean(rewards);
    let scale = population_std(rewards, m).max(std_floor);
    Ok(rewards.iter().map(|r| (r - m) / scale).collect())
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> Result<f64, GrpoError> {
    if ratio.is_nan() || ratio <= 0.0 {
        return Err(GrpoError::NonPositiveRatio(ratio));
    }
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    Ok((ratio * advantage).min(clipped * advantage))
}

/// Per-sample KL estimate `u - ln u - 1` with `u = pi_ref / pi_new`. Always
/// non-negative; zero when the log-probabilities match.
pub fn kl_penalty(logp_new: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_new;
    // exp(d) - 1 - d without cancellation near d = 0.
    (d.exp_m1() - d).max(0.0)
}

/// Objective value for one group whose advantages are already normalized.
pub fn grpo_objective(group: &[GroupSample], config: &GrpoConfig) -> Result<f64, GrpoError> {
    if group.is_empty() {
        return Err(GrpoError::EmptyGroup);
    }
    if group.len() != config.group_size {
        return Err(GrpoError::GroupSizeMismatch {
            got: group.len(),
            expected: config.group_size,
        });
    }
    let mut total = 0.0;
    for s in group {
        let ratio = (s.logp_new - s.logp_old).exp();
        let surrogate = match config.objective_mode {
            ObjectiveMode::Full => clipped_term(ratio, s.advantage, config.clip_eps)?,
            ObjectiveMode::Simplified => ratio * s.advantage,
        };
        total += surrogate - config.kl_beta * kl_penalty(s.logp_new, s.logp_ref);
    }
    Ok(total / group.len() as f64)
}

/// A policy over discrete actions with exact log-probabilities and their
/// gradients with respect to a flat parameter vector.
pub trait ExactPolicy {
    type Task;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn log_prob(&self, task: &Self::Task, action: usize) -> f64;
    /// Adds `scale * d log pi(action | task) / d params` into `out`.
    fn accumulate_grad_log_prob(&self, task: &Self::Task, action: usize, scale: f64, out: &mut [f64]);
}

/// One sampled action together with its bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub action: usize,
    pub sample: GroupSample,
}

/// All rollouts drawn for one task.
#[derive(Debug, Clone)]
pub struct RolloutGroup<'t, T> {
    pub task: &'t T,
    pub rollouts: Vec<Rollout>,
}

impl<T> RolloutGroup<'_, T> {
    /// Fills in group-normalized advantages from the rollout rewards.
    pub fn normalize(&mut self, std_floor: f64) -> Result<(), GrpoError> {
        let rewards: Vec<f64> = self.rollouts.iter().map(|r| r.sample.reward).collect();
        let advantages = normalize_advantages(&rewards, std_floor)?;
        for (r, a) in self.rollouts.iter_mut().zip(advantages) {
            r.sample.advantage = a;
        }
        Ok(())
    }
}

/// Batch objective (mean over groups) evaluated with `policy` as the new
/// policy, plus its exact gradient. Old and reference log-probabilities are
/// taken from the recorded samples.
pub fn surrogate_objective_and_grad<P: ExactPolicy>(
    policy: &P,
    groups: &[RolloutGroup<'_, P::Task>],
    config: &GrpoConfig,
) -> Result<(f64, Vec<f64>), GrpoError> {
    let mut grad = vec![0.0; policy.params().len()];
    let mut value = 0.0;
    for group in groups {
        let g = group.rollouts.len();
        if g == 0 {
            return Err(GrpoError::EmptyGroup);
        }
        let weight = 1.0 / (g as f64 * groups.len() as f64);
        for rollout in &group.rollouts {
            let s = &rollout.sample;
            let logp = policy.log_prob(group.task, rollout.action);
            let ratio = (logp - s.logp_old).exp();
            let a = s.advantage;
            let (surrogate, d_surrogate) = match config.objective_mode {
                ObjectiveMode::Simplified => (ratio * a, ratio * a),
                ObjectiveMode::Full => {
                    let clipped = ratio.clamp(1.0 - config.clip_eps, 1.0 + config.clip_eps);
                    if clipped * a < ratio * a {
                        // Clipped branch binds: constant in the parameters.
                        (clipped * a, 0.0)
                    } else {
                        (ratio * a, ratio * a)
                    }
                }
            };
            let d = s.logp_ref - logp;
            let kl = (d.exp_m1() - d).max(0.0);
            // d KL / d logp = 1 - exp(d)
            let d_kl = -d.exp_m1();
            value += weight * (surrogate - config.kl_beta * kl);
            let coef = d_surrogate - config.kl_beta * d_kl;
            policy.accumulate_grad_log_prob(group.task, rollout.action, weight * coef, &mut grad);
        }
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_completion_length: f64,
    pub objective: f64,
}

/// One single-update GRPO step: `sample_group` draws a group for each task
/// from the current policy (which is therefore also the old policy), then
/// the parameters take one gradient-ascent step on the batch objective.
pub fn train_step<'t, P, F>(
    policy: &mut P,
    tasks: &[&'t P::Task],
    config: &GrpoConfig,
    step: usize,
    mut sample_group: F,
) -> Result<StepStats, GrpoError>
where
    P: ExactPolicy,
    F: FnMut(&P, &'t P::Task) -> Vec<Rollout>,
{
    config.validate()?;
    let mut groups = Vec::with_capacity(tasks.len());
    for &task in tasks {
        let rollouts = sample_group(policy, task);
        if rollouts.len() != config.group_size {
            return Err(GrpoError::GroupSizeMismatch {
                got: rollouts.len(),
                expected: config.group_size,
            });
        }
        let mut group = RolloutGroup { task, rollouts };
        group.normalize(config.std_floor)?;
        groups.push(group);
    }
    let (objective, grad) = surrogate_objective_and_grad(policy, &groups, config)?;
    if let Some((coord, value)) = grad.iter().copied().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(GrpoError::NonFiniteGradient { step, coord, value });
    }
    for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
        *p += config.learning_rate * g;
    }

    let samples = groups.iter().flat_map(|g| g.rollouts.iter().map(|r| &r.sample));
    let (mut reward_sum, mut length_sum, mut n) = (0.0, 0.0, 0usize);
    for s in samples {
        reward_sum += s.reward;
        length_sum += s.completion.text.chars().count() as f64;
        n += 1;
    }
    Ok(StepStats {
        step,
        mean_reward: reward_sum / n.max(1) as f64,
        mean_completion_length: length_sum / n.max(1) as f64,
        objective,
    })
}
