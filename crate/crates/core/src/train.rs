//! Training loop: sample groups from θ_old, score them, take a GRPO step.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::McqItem;
use crate::error::{Error, Result};
use crate::grpo::{grpo_step, ActionGroup, GrpoConfig, StepDiagnostics, StepLog};
use crate::policy::{
    action_distribution, featurize, render_response, sample_group, CompositeAction, PolicyParams,
    StateFeatures,
};
use crate::rewards::{total_reward, RewardWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    /// Expected total reward over the dataset before the first step.
    pub initial_mean_reward: f64,
    /// Expected total reward over the dataset after the last step.
    pub final_mean_reward: f64,
    pub max_total_reward: f64,
    pub wall_time_secs: f64,
}

pub struct Trainer<'a> {
    items: &'a [McqItem],
    features: Vec<StateFeatures>,
    /// Total reward of every valid action, per item.
    reward_tables: Vec<Vec<f64>>,
    policy: PolicyParams,
    config: GrpoConfig,
    weights: RewardWeights,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        items: &'a [McqItem],
        policy: PolicyParams,
        config: GrpoConfig,
        weights: RewardWeights,
    ) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        if items.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let features = items
            .iter()
            .map(|item| featurize(item, policy.feature_dim()))
            .collect::<Result<Vec<_>>>()?;
        let reward_tables = items
            .iter()
            .map(|item| {
                CompositeAction::enumerate(item.num_options())
                    .map(|a| total_reward(&render_response(a, item), &item.gold, &weights).total)
                    .collect()
            })
            .collect();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            items,
            features,
            reward_tables,
            policy,
            config,
            weights,
            rng,
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn into_policy(self) -> PolicyParams {
        self.policy
    }

    fn next_state(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.items.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    /// Freezes θ_old and samples `batch_states × grad_accum_steps` scored groups.
    pub fn collect_batch(&mut self) -> Result<Vec<ActionGroup>> {
        self.policy.freeze();
        let n_groups = self.config.batch_states * self.config.grad_accum_steps;
        let mut batch = Vec::with_capacity(n_groups);
        for _ in 0..n_groups {
            let idx = self.next_state();
            let item = &self.items[idx];
            let seed: u64 = self.rng.random();
            let sampled = sample_group(
                &self.policy,
                &self.features[idx],
                self.config.group_size,
                seed,
            )?;
            if sampled.logprob_old.iter().any(|l| !l.is_finite()) {
                return Err(Error::NumericalFailure {
                    group_id: item.id.clone(),
                    detail: "non-finite sampling distribution".into(),
                });
            }
            let rendered: Vec<String> = sampled
                .actions
                .iter()
                .map(|a| render_response(*a, item))
                .collect();
            let rewards = rendered
                .iter()
                .map(|r| total_reward(r, &item.gold, &self.weights))
                .collect();
            batch.push(ActionGroup {
                state_id: item.id.clone(),
                features: self.features[idx].clone(),
                actions: sampled.actions,
                logprob_old: sampled.logprob_old,
                rewards,
                rendered,
            });
        }
        Ok(batch)
    }

    pub fn step(&mut self, step_index: usize) -> Result<StepDiagnostics> {
        let batch = self.collect_batch()?;
        grpo_step(&batch, &mut self.policy, &self.config, step_index)
    }

    /// Exact expected total reward under the current policy, averaged over items.
    pub fn expected_reward(&self) -> Result<f64> {
        let mut total = 0.0;
        for (features, table) in self.features.iter().zip(&self.reward_tables) {
            let probs = action_distribution(&self.policy, features)?;
            total += probs.iter().zip(table).map(|(p, r)| p * r).sum::<f64>();
        }
        Ok(total / self.items.len() as f64)
    }

    /// Runs `total_steps` steps, handing each step's log line to `on_step`.
    ///
    /// On error the trainer still holds the weights of the last completed step.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepLog)) -> Result<TrainSummary> {
        let start = Instant::now();
        let initial = self.expected_reward()?;
        for step in 0..self.config.total_steps {
            let diag = self.step(step)?;
            on_step(&StepLog::new(step, &diag));
        }
        Ok(TrainSummary {
            steps: self.config.total_steps,
            initial_mean_reward: initial,
            final_mean_reward: self.expected_reward()?,
            max_total_reward: self.weights.max_total(),
            wall_time_secs: start.elapsed().as_secs_f64(),
        })
    }
}
