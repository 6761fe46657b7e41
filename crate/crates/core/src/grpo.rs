//! Group relative policy optimization.
//!
//! For each state a group of G actions is drawn from the frozen policy θ_old.
//! Each action's advantage is its reward minus the group mean (optionally
//! divided by the group's population standard deviation), and the policy
//! ascends the clipped surrogate
//!
//! ```text
//! J(θ) = mean_{s,a} min(ρ·Â, clip(ρ, 1−ε, 1+ε)·Â),   ρ = π_θ(a|s) / π_θ_old(a|s)
//! ```
//!
//! There is no value network and no KL penalty.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{add_scaled_score, CompositeAction, PolicyParams, StateFeatures};
use crate::rewards::RewardBreakdown;

fn default_group_size() -> usize {
    3
}
fn default_clip_epsilon() -> f64 {
    0.2
}
fn default_lr_initial() -> f64 {
    2e-5
}
fn default_norm_floor() -> f64 {
    1e-8
}
fn default_one() -> usize {
    1
}
fn default_batch_states() -> usize {
    3
}
fn default_grad_accum() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_clip_epsilon")]
    pub clip_epsilon: f64,
    #[serde(default = "default_lr_initial")]
    pub lr_initial: f64,
    #[serde(default)]
    pub lr_min: f64,
    /// Cosine horizon. Has no default.
    pub total_steps: usize,
    #[serde(default = "default_one")]
    pub inner_epochs: usize,
    #[serde(default)]
    pub normalize_advantages: bool,
    #[serde(default = "default_norm_floor")]
    pub norm_floor: f64,
    #[serde(default = "default_batch_states")]
    pub batch_states: usize,
    #[serde(default = "default_grad_accum")]
    pub grad_accum_steps: usize,
    #[serde(default)]
    pub seed: u64,
}

impl GrpoConfig {
    /// Defaults (G = 3, lr 2e-5, batch 3, grad-accum 4, ε = 0.2) with the given horizon.
    pub fn with_total_steps(total_steps: usize) -> Self {
        Self {
            group_size: default_group_size(),
            clip_epsilon: default_clip_epsilon(),
            lr_initial: default_lr_initial(),
            lr_min: 0.0,
            total_steps,
            inner_epochs: 1,
            normalize_advantages: false,
            norm_floor: default_norm_floor(),
            batch_states: default_batch_states(),
            grad_accum_steps: default_grad_accum(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(m));
        if self.group_size < 2 {
            return fail("group_size must be at least 2");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return fail("clip_epsilon must lie in (0, 1)");
        }
        if !(self.lr_initial.is_finite() && self.lr_initial > 0.0) {
            return fail("lr_initial must be positive");
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_initial) {
            return fail("lr_min must lie in [0, lr_initial]");
        }
        if !(self.norm_floor.is_finite() && self.norm_floor > 0.0) {
            return fail("norm_floor must be positive");
        }
        if self.total_steps == 0
            || self.inner_epochs == 0
            || self.batch_states == 0
            || self.grad_accum_steps == 0
        {
            return fail(
                "total_steps, inner_epochs, batch_states and grad_accum_steps must be positive",
            );
        }
        Ok(())
    }
}

/// G sampled actions for one state, with what was observed about each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGroup {
    pub state_id: String,
    pub features: StateFeatures,
    pub actions: Vec<CompositeAction>,
    pub logprob_old: Vec<f64>,
    pub rewards: Vec<RewardBreakdown>,
    pub rendered: Vec<String>,
}

impl ActionGroup {
    pub fn totals(&self) -> Vec<f64> {
        self.rewards.iter().map(|r| r.total).collect()
    }

    fn check(&self, policy: &PolicyParams, group_size: usize) -> Result<()> {
        let violation = |m: String| {
            Err(Error::ContractViolation(format!(
                "group {}: {m}",
                self.state_id
            )))
        };
        let g = self.actions.len();
        if g != group_size
            || self.logprob_old.len() != g
            || self.rewards.len() != g
            || self.rendered.len() != g
        {
            return violation(format!(
                "expected {group_size} entries in every list, got actions {}, logprob_old {}, rewards {}, rendered {}",
                g,
                self.logprob_old.len(),
                self.rewards.len(),
                self.rendered.len()
            ));
        }
        if self.logprob_old.iter().any(|l| !l.is_finite() || *l > 0.0) {
            return violation("logprob_old entries must be finite and <= 0".into());
        }
        if self.features.dim() != policy.feature_dim()
            || self.features.num_options > policy.max_options()
        {
            return violation("state features do not fit the policy".into());
        }
        if let Some(a) = self
            .actions
            .iter()
            .find(|a| a.answer_index >= self.features.num_options)
        {
            return violation(format!("action {a:?} names a missing option"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub objective_value: f64,
    pub ratios: Vec<f64>,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub lr_used: f64,
    pub mean_reward: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub objective: f64,
    pub mean_reward: f64,
    pub clip_fraction: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

impl StepLog {
    pub fn new(step: usize, d: &StepDiagnostics) -> Self {
        Self {
            step,
            objective: d.objective_value,
            mean_reward: d.mean_reward,
            clip_fraction: d.clip_fraction,
            lr: d.lr_used,
            grad_norm: d.grad_norm,
        }
    }
}

/// `Â_i = r_i − mean(r)`, optionally divided by `max(std(r), norm_floor)` (population std).
pub fn compute_advantages(
    rewards: &[f64],
    normalize: bool,
    norm_floor: f64,
) -> Result<AdvantageVector> {
    if rewards.is_empty() {
        return Err(Error::invalid("rewards must be non-empty"));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("rewards must be finite"));
    }
    if !(norm_floor > 0.0) {
        return Err(Error::invalid("norm_floor must be positive"));
    }
    let n = rewards.len() as f64;
    // r_i − mean(r) written as Σ_j (r_i − r_j) / G: a constant shift of every
    // reward cancels inside each difference, before any rounding of the mean.
    let mut values: Vec<f64> = rewards
        .iter()
        .map(|ri| rewards.iter().map(|rj| ri - rj).sum::<f64>() / n)
        .collect();
    if normalize {
        let std = (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let denom = std.max(norm_floor);
        values.iter_mut().for_each(|v| *v /= denom);
    }
    Ok(AdvantageVector {
        values,
        normalized: normalize,
    })
}

/// `min(ρ·Â, clip(ρ, 1−ε, 1+ε)·Â)`.
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> Result<f64> {
    if !(ratio > 0.0) {
        return Err(Error::invalid(format!(
            "ratio must be positive, got {ratio}"
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    Ok(clipped(ratio, advantage, epsilon))
}

fn clipped(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let bounded = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(bounded * advantage)
}

/// True when the constant (clipped) branch of the min is the one in effect.
fn clip_active(ratio: f64, advantage: f64, epsilon: f64) -> bool {
    (advantage > 0.0 && ratio > 1.0 + epsilon) || (advantage < 0.0 && ratio < 1.0 - epsilon)
}

/// Running sums over (state, action) pairs, in group order then action order.
struct SurrogateSums {
    objective: f64,
    reward: f64,
    pairs: usize,
    clipped: usize,
    ratios: Vec<f64>,
}

impl SurrogateSums {
    fn new() -> Self {
        Self {
            objective: 0.0,
            reward: 0.0,
            pairs: 0,
            clipped: 0,
            ratios: Vec::new(),
        }
    }
}

/// Adds one group's terms to `sums`, and `A·ρ·∇log π` of each unclipped term to `grad`.
fn accumulate_group(
    group: &ActionGroup,
    policy: &PolicyParams,
    config: &GrpoConfig,
    sums: &mut SurrogateSums,
    mut grad: Option<&mut [f64]>,
) -> Result<()> {
    group.check(policy, config.group_size)?;
    let adv = compute_advantages(
        &group.totals(),
        config.normalize_advantages,
        config.norm_floor,
    )?;
    let probs = policy.distribution_under(&policy.weights, &group.features)?;
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NumericalFailure {
            group_id: group.state_id.clone(),
            detail: "non-finite action probabilities".into(),
        });
    }
    let eps = config.clip_epsilon;
    for (i, action) in group.actions.iter().enumerate() {
        let a = action.index();
        let ratio = (probs[a].ln() - group.logprob_old[i]).exp();
        let advantage = adv.values[i];
        sums.objective += clipped(ratio, advantage, eps);
        sums.reward += group.rewards[i].total;
        sums.pairs += 1;
        sums.ratios.push(ratio);
        let active = clip_active(ratio, advantage, eps);
        if active {
            sums.clipped += 1;
        } else if let Some(g) = grad.as_deref_mut() {
            add_scaled_score(
                g,
                policy.action_count(),
                &group.features,
                &probs,
                a,
                advantage * ratio,
            );
        }
    }
    Ok(())
}

fn diagnostics(sums: SurrogateSums, grad_norm: f64, lr: f64) -> StepDiagnostics {
    let n = sums.pairs.max(1) as f64;
    StepDiagnostics {
        objective_value: sums.objective / n,
        ratios: sums.ratios,
        clip_fraction: sums.clipped as f64 / n,
        grad_norm,
        lr_used: lr,
        mean_reward: sums.reward / n,
    }
}

/// Mean clipped term over every (state, action) pair of `groups`.
pub fn surrogate_objective(
    groups: &[ActionGroup],
    policy: &PolicyParams,
    config: &GrpoConfig,
) -> Result<(f64, StepDiagnostics)> {
    let mut sums = SurrogateSums::new();
    for group in groups {
        accumulate_group(group, policy, config, &mut sums, None)?;
    }
    let d = diagnostics(sums, 0.0, 0.0);
    Ok((d.objective_value, d))
}

/// Analytic gradient of [`surrogate_objective`] with respect to the current weights.
pub fn surrogate_gradient(
    groups: &[ActionGroup],
    policy: &PolicyParams,
    config: &GrpoConfig,
) -> Result<Vec<f64>> {
    let (grad, _) = accumulated_gradient(groups, policy, config)?;
    Ok(grad)
}

/// Sums gradient contributions micro-batch by micro-batch, then averages over all pairs.
fn accumulated_gradient(
    batch: &[ActionGroup],
    policy: &PolicyParams,
    config: &GrpoConfig,
) -> Result<(Vec<f64>, SurrogateSums)> {
    let mut grad = vec![0.0; policy.weights.len()];
    let mut sums = SurrogateSums::new();
    if batch.is_empty() {
        return Ok((grad, sums));
    }
    let micro = batch.len().div_ceil(config.grad_accum_steps);
    for chunk in batch.chunks(micro) {
        for group in chunk {
            accumulate_group(group, policy, config, &mut sums, Some(&mut grad))?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NumericalFailure {
                    group_id: group.state_id.clone(),
                    detail: "non-finite gradient".into(),
                });
            }
        }
    }
    let n = sums.pairs as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((grad, sums))
}

/// One optimizer step: `inner_epochs` ascents on the surrogate against the same θ_old,
/// each a single parameter write after accumulating all micro-batches.
///
/// On a non-finite gradient the step aborts before writing, so `policy` keeps
/// its last good weights.
pub fn grpo_step(
    batch: &[ActionGroup],
    policy: &mut PolicyParams,
    config: &GrpoConfig,
    step_index: usize,
) -> Result<StepDiagnostics> {
    if batch.is_empty() {
        return Err(Error::invalid("batch must be non-empty"));
    }
    if step_index >= config.total_steps {
        return Err(Error::invalid(format!(
            "step {step_index} is outside the horizon of {} steps",
            config.total_steps
        )));
    }
    let lr = cosine_lr(step_index, config)?;
    let mut last = None;
    for _ in 0..config.inner_epochs {
        let (grad, sums) = accumulated_gradient(batch, policy, config)?;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let updated: Vec<f64> = policy
            .weights
            .iter()
            .zip(&grad)
            .map(|(w, g)| w + lr * g)
            .collect();
        if updated.iter().any(|w| !w.is_finite()) {
            return Err(Error::NumericalFailure {
                group_id: batch[0].state_id.clone(),
                detail: format!(
                    "parameter update overflowed (lr {lr}, batch of {} groups)",
                    batch.len()
                ),
            });
        }
        policy.weights = updated;
        last = Some(diagnostics(sums, grad_norm, lr));
    }
    Ok(last.expect("inner_epochs >= 1"))
}

/// `lr_min + ½(lr_initial − lr_min)(1 + cos(π·step/T))`, no restarts.
pub fn cosine_lr(step: usize, config: &GrpoConfig) -> Result<f64> {
    if config.total_steps == 0 || step > config.total_steps {
        return Err(Error::invalid(format!(
            "step {step} outside [0, {}]",
            config.total_steps
        )));
    }
    let progress = step as f64 / config.total_steps as f64;
    let lr =
        config.lr_min + 0.5 * (config.lr_initial - config.lr_min) * (1.0 + (PI * progress).cos());
    Ok(lr.clamp(config.lr_min, config.lr_initial))
}
