//! Linear-softmax policy over composite (answer, format) actions.
//!
//! Action `a = answer_index * 6 + format_variant`. Weights are a dense
//! `feature_dim x action_count` matrix stored row-major. For an item with
//! fewer options than the policy supports, actions naming a missing option
//! get probability zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{option_letter, McqItem, MAX_OPTIONS, MIN_OPTIONS};
use crate::error::{Error, Result};
use crate::rewards::{ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN};

pub const DEFAULT_FEATURE_DIM: usize = 64;
/// Fixed text inside the think block of rendered responses.
pub const REASONING_STUB: &str = "eliminating options";
/// One indicator slot per supported option count (2..=10).
const OPTION_SLOTS: usize = MAX_OPTIONS - MIN_OPTIONS + 1;
/// Value of the active option-count slot. Kept small: the slot is shared by
/// every item with that count, so at 1.0 it dominates the token features as a
/// bias and pulls all items toward the same letter early in training.
pub const OPTION_INDICATOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormatVariant {
    WellFormed,
    MissingThink,
    MissingAnswer,
    SwappedOrder,
    ExtraAnswerTag,
    Untagged,
}

impl FormatVariant {
    pub const ALL: [FormatVariant; 6] = [
        FormatVariant::WellFormed,
        FormatVariant::MissingThink,
        FormatVariant::MissingAnswer,
        FormatVariant::SwappedOrder,
        FormatVariant::ExtraAnswerTag,
        FormatVariant::Untagged,
    ];
    pub const COUNT: usize = Self::ALL.len();

    fn ordinal(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompositeAction {
    pub answer_index: usize,
    pub format: FormatVariant,
}

impl CompositeAction {
    pub fn new(answer_index: usize, format: FormatVariant) -> Self {
        Self {
            answer_index,
            format,
        }
    }

    pub fn index(&self) -> usize {
        self.answer_index * FormatVariant::COUNT + self.format.ordinal()
    }

    pub fn from_index(index: usize) -> Self {
        Self {
            answer_index: index / FormatVariant::COUNT,
            format: FormatVariant::ALL[index % FormatVariant::COUNT],
        }
    }

    /// Every action valid for an item with `num_options` options, in index order.
    pub fn enumerate(num_options: usize) -> impl Iterator<Item = CompositeAction> {
        (0..num_options * FormatVariant::COUNT).map(Self::from_index)
    }
}

/// Turns an action into a tagged response for `item`.
pub fn render_response(action: CompositeAction, item: &McqItem) -> String {
    debug_assert!(action.answer_index < item.num_options());
    let letter = option_letter(action.answer_index);
    let think = format!("{THINK_OPEN}{REASONING_STUB}{THINK_CLOSE}");
    let answer = format!("{ANSWER_OPEN}{letter}{ANSWER_CLOSE}");
    match action.format {
        FormatVariant::WellFormed => format!("{think}\n{answer}"),
        FormatVariant::MissingThink => answer,
        FormatVariant::MissingAnswer => think,
        FormatVariant::SwappedOrder => format!("{answer}\n{think}"),
        FormatVariant::ExtraAnswerTag => format!("{think}\n{answer}\n{answer}"),
        FormatVariant::Untagged => letter,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFeatures {
    pub values: Vec<f64>,
    pub num_options: usize,
}

impl StateFeatures {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Hashed bag of question tokens (L2-normalized) followed by a one-hot option-count indicator.
pub fn featurize(item: &McqItem, feature_dim: usize) -> Result<StateFeatures> {
    if feature_dim <= OPTION_SLOTS {
        return Err(Error::invalid(format!(
            "feature_dim must exceed {OPTION_SLOTS}, got {feature_dim}"
        )));
    }
    let n = item.num_options();
    if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
        return Err(Error::invalid(format!("item {} has {n} options", item.id)));
    }
    let token_slots = feature_dim - OPTION_SLOTS;
    let mut values = vec![0.0; feature_dim];
    for token in tokenize(&item.question) {
        values[(fnv1a(token.as_bytes()) % token_slots as u64) as usize] += 1.0;
    }
    let norm = values[..token_slots]
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > 0.0 {
        values[..token_slots].iter_mut().for_each(|v| *v /= norm);
    }
    values[token_slots + n - MIN_OPTIONS] = OPTION_INDICATOR;
    Ok(StateFeatures {
        values,
        num_options: n,
    })
}

/// Policy weights plus the optional frozen copy used for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    feature_dim: usize,
    action_count: usize,
    pub weights: Vec<f64>,
    pub snapshot: Option<Vec<f64>>,
}

impl PolicyParams {
    /// Zero weights for items with up to `max_options` options.
    pub fn zeros(feature_dim: usize, max_options: usize) -> Result<Self> {
        if feature_dim == 0 || !(MIN_OPTIONS..=MAX_OPTIONS).contains(&max_options) {
            return Err(Error::invalid(format!(
                "bad policy shape: feature_dim {feature_dim}, max_options {max_options}"
            )));
        }
        let action_count = max_options * FormatVariant::COUNT;
        Ok(Self {
            feature_dim,
            action_count,
            weights: vec![0.0; feature_dim * action_count],
            snapshot: None,
        })
    }

    pub fn from_weights(
        feature_dim: usize,
        action_count: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if action_count == 0 || !action_count.is_multiple_of(FormatVariant::COUNT) {
            return Err(Error::invalid(format!(
                "action count {action_count} is not a positive multiple of {}",
                FormatVariant::COUNT
            )));
        }
        let max_options = action_count / FormatVariant::COUNT;
        let mut params = Self::zeros(feature_dim, max_options)?;
        if weights.len() != params.weights.len() {
            return Err(Error::invalid(format!(
                "expected {} weights, got {}",
                params.weights.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        params.weights = weights;
        Ok(params)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn max_options(&self) -> usize {
        self.action_count / FormatVariant::COUNT
    }

    /// Copies the current weights into the snapshot (θ_old).
    pub fn freeze(&mut self) {
        self.snapshot = Some(self.weights.clone());
    }

    pub fn weight(&self, feature: usize, action: usize) -> f64 {
        self.weights[feature * self.action_count + action]
    }

    pub fn weight_mut(&mut self, feature: usize, action: usize) -> &mut f64 {
        &mut self.weights[feature * self.action_count + action]
    }

    fn check(&self, features: &StateFeatures) -> Result<()> {
        if features.dim() != self.feature_dim {
            return Err(Error::invalid(format!(
                "feature length {} does not match policy feature_dim {}",
                features.dim(),
                self.feature_dim
            )));
        }
        if features.num_options > self.max_options() {
            return Err(Error::invalid(format!(
                "state has {} options but the policy supports {}",
                features.num_options,
                self.max_options()
            )));
        }
        Ok(())
    }

    /// Distribution under an arbitrary weight buffer of this policy's shape.
    pub fn distribution_under(
        &self,
        weights: &[f64],
        features: &StateFeatures,
    ) -> Result<Vec<f64>> {
        self.check(features)?;
        let valid = features.num_options * FormatVariant::COUNT;
        let mut logits = vec![0.0; valid];
        for (f, x) in features.values.iter().enumerate() {
            if *x == 0.0 {
                continue;
            }
            let row = &weights[f * self.action_count..f * self.action_count + valid];
            for (logit, w) in logits.iter_mut().zip(row) {
                *logit += w * x;
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs = vec![0.0; self.action_count];
        let mut total = 0.0;
        for (p, z) in probs.iter_mut().zip(&logits) {
            *p = (z - max).exp();
            total += *p;
        }
        probs[..valid].iter_mut().for_each(|p| *p /= total);
        Ok(probs)
    }

    fn snapshot_weights(&self) -> Result<&[f64]> {
        self.snapshot
            .as_deref()
            .ok_or_else(|| Error::ContractViolation("policy has no frozen snapshot".into()))
    }
}

/// Softmax of `weightsᵀ · features` over the actions valid for the state.
pub fn action_distribution(params: &PolicyParams, features: &StateFeatures) -> Result<Vec<f64>> {
    params.distribution_under(&params.weights, features)
}

pub fn log_prob(
    params: &PolicyParams,
    features: &StateFeatures,
    action: CompositeAction,
) -> Result<f64> {
    check_action(params, features, action)?;
    Ok(action_distribution(params, features)?[action.index()].ln())
}

fn check_action(
    params: &PolicyParams,
    features: &StateFeatures,
    action: CompositeAction,
) -> Result<()> {
    if action.answer_index >= features.num_options || action.index() >= params.action_count() {
        return Err(Error::invalid(format!(
            "action {action:?} invalid for a state with {} options",
            features.num_options
        )));
    }
    Ok(())
}

/// `∇_θ log π(action | s) = features ⊗ (one_hot(action) − π(·|s))`, row-major like the weights.
pub fn grad_log_prob(
    params: &PolicyParams,
    features: &StateFeatures,
    action: CompositeAction,
) -> Result<Vec<f64>> {
    check_action(params, features, action)?;
    let probs = action_distribution(params, features)?;
    let mut grad = vec![0.0; params.weights.len()];
    add_scaled_score(
        &mut grad,
        params.action_count(),
        features,
        &probs,
        action.index(),
        1.0,
    );
    Ok(grad)
}

/// `grad += scale · features ⊗ (one_hot(action) − probs)`.
pub(crate) fn add_scaled_score(
    grad: &mut [f64],
    action_count: usize,
    features: &StateFeatures,
    probs: &[f64],
    action: usize,
    scale: f64,
) {
    for (f, x) in features.values.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        let row = &mut grad[f * action_count..(f + 1) * action_count];
        let sx = scale * x;
        for (a, g) in row.iter_mut().enumerate() {
            let indicator = if a == action { 1.0 } else { 0.0 };
            *g += sx * (indicator - probs[a]);
        }
    }
}

/// G actions drawn from the snapshot policy, with their snapshot log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledGroup {
    pub actions: Vec<CompositeAction>,
    pub logprob_old: Vec<f64>,
}

/// Draws `g` i.i.d. actions from the frozen snapshot. Deterministic in `rng_seed`.
pub fn sample_group(
    params: &PolicyParams,
    features: &StateFeatures,
    g: usize,
    rng_seed: u64,
) -> Result<SampledGroup> {
    let snapshot = params.snapshot_weights()?;
    let probs = params.distribution_under(snapshot, features)?;
    let valid = features.num_options * FormatVariant::COUNT;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut actions = Vec::with_capacity(g);
    let mut logprob_old = Vec::with_capacity(g);
    for _ in 0..g {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        // Fall back to the last positive-probability action when rounding leaves u above the CDF.
        let mut chosen = (0..valid).rev().find(|&a| probs[a] > 0.0).unwrap_or(0);
        for (a, p) in probs[..valid].iter().enumerate() {
            acc += p;
            if u < acc && *p > 0.0 {
                chosen = a;
                break;
            }
        }
        actions.push(CompositeAction::from_index(chosen));
        logprob_old.push(probs[chosen].ln());
    }
    Ok(SampledGroup {
        actions,
        logprob_old,
    })
}

/// Argmax action under the current weights; ties go to the lowest index.
pub fn greedy_action(params: &PolicyParams, features: &StateFeatures) -> Result<CompositeAction> {
    let probs = action_distribution(params, features)?;
    let valid = features.num_options * FormatVariant::COUNT;
    let mut best = 0;
    for a in 1..valid {
        if probs[a] > probs[best] {
            best = a;
        }
    }
    Ok(CompositeAction::from_index(best))
}

/// On-disk checkpoint: `{"feature_dim", "actions", "weights": [[..]..], "seed"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub feature_dim: usize,
    pub actions: usize,
    pub weights: Vec<Vec<f64>>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn from_params(params: &PolicyParams, seed: u64) -> Self {
        Self {
            feature_dim: params.feature_dim(),
            actions: params.action_count(),
            weights: params
                .weights
                .chunks(params.action_count())
                .map(<[f64]>::to_vec)
                .collect(),
            seed,
        }
    }

    pub fn into_params(self) -> Result<PolicyParams> {
        if self.weights.len() != self.feature_dim
            || self.weights.iter().any(|r| r.len() != self.actions)
        {
            return Err(Error::invalid(format!(
                "checkpoint weights are not {} x {}",
                self.feature_dim, self.actions
            )));
        }
        PolicyParams::from_weights(self.feature_dim, self.actions, self.weights.concat())
    }
}
