//! Difficulty filtering.
//!
//! A filter model answers each candidate item once. The item is Easy when
//! that answer is both correct and in the prescribed tagged format, Hard
//! otherwise. The training set is then drawn as `n_hard` Hard plus `n_easy`
//! Easy items (400 + 100 by default).

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::client::{cache_key, CacheStatus, ResponseCache};
use crate::data::{ensure_unique_ids, McqItem};
use crate::error::{Error, Result};
use crate::parallel::bounded_map;
use crate::policy::{featurize, greedy_action, render_response, PolicyParams};
use crate::prompt::filter_prompt;
use crate::rewards::{accuracy_reward, format_reward, parse_response};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Easy,
    Hard,
    /// No response could be obtained; excluded from selection.
    Unobtainable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub item_id: String,
    pub label: Label,
    pub response: String,
    pub correct: bool,
    pub format_ok: bool,
    pub filter_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn default_n_hard() -> usize {
    400
}
fn default_n_easy() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionSpec {
    #[serde(default = "default_n_hard")]
    pub n_hard: usize,
    #[serde(default = "default_n_easy")]
    pub n_easy: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SelectionSpec {
    fn default() -> Self {
        Self {
            n_hard: default_n_hard(),
            n_easy: default_n_easy(),
            seed: 0,
        }
    }
}

pub fn classify(item: &McqItem, response: &str, filter_model: &str) -> FilterVerdict {
    let parsed = parse_response(response);
    let correct = accuracy_reward(&parsed, &item.gold) == 1.0;
    let format_ok = format_reward(&parsed) == 1.0;
    FilterVerdict {
        item_id: item.id.clone(),
        label: if correct && format_ok {
            Label::Easy
        } else {
            Label::Hard
        },
        response: response.to_string(),
        correct,
        format_ok,
        filter_model: filter_model.to_string(),
        error: None,
    }
}

/// Anything that can produce one response for an item.
pub trait Responder: Sync {
    fn model_id(&self) -> String;

    fn temperature(&self) -> f64 {
        0.0
    }

    fn respond(&self, item: &McqItem, prompt: &str) -> Result<String>;
}

/// Puts a [`ResponseCache`] in front of any responder.
pub struct CachedResponder<R> {
    inner: R,
    cache: ResponseCache,
}

impl<R: Responder> CachedResponder<R> {
    pub fn new(inner: R, cache: ResponseCache) -> Self {
        Self { inner, cache }
    }

    pub fn inner(&self) -> &R {
        &self.inner
    }
}

impl<R: Responder> Responder for CachedResponder<R> {
    fn model_id(&self) -> String {
        self.inner.model_id()
    }

    fn temperature(&self) -> f64 {
        self.inner.temperature()
    }

    fn respond(&self, item: &McqItem, prompt: &str) -> Result<String> {
        let key = cache_key(&self.model_id(), prompt, self.temperature());
        if let Some(hit) = self.cache.get_ok(&key) {
            return Ok(hit);
        }
        let response = self.inner.respond(item, prompt)?;
        self.cache.put_response(key, &response, CacheStatus::Ok)?;
        Ok(response)
    }
}

/// Greedy responses from an in-process policy.
pub struct PolicyResponder {
    params: PolicyParams,
    label: String,
}

impl PolicyResponder {
    pub fn new(params: PolicyParams, label: impl Into<String>) -> Self {
        Self {
            params,
            label: label.into(),
        }
    }
}

impl Responder for PolicyResponder {
    fn model_id(&self) -> String {
        self.label.clone()
    }

    fn respond(&self, item: &McqItem, _prompt: &str) -> Result<String> {
        let features = featurize(item, self.params.feature_dim())?;
        Ok(render_response(
            greedy_action(&self.params, &features)?,
            item,
        ))
    }
}

/// Canned responses keyed by item id; a missing id is a responder failure.
pub struct FixtureResponder {
    label: String,
    responses: HashMap<String, String>,
}

impl FixtureResponder {
    pub fn new(label: impl Into<String>, responses: HashMap<String, String>) -> Self {
        Self {
            label: label.into(),
            responses,
        }
    }
}

impl Responder for FixtureResponder {
    fn model_id(&self) -> String {
        self.label.clone()
    }

    fn respond(&self, item: &McqItem, _prompt: &str) -> Result<String> {
        self.responses
            .get(&item.id)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no canned response for item {}", item.id)))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub easy: usize,
    pub hard: usize,
    pub unobtainable: usize,
}

impl LabelCounts {
    pub fn tally(verdicts: &[FilterVerdict]) -> Self {
        let mut counts = Self::default();
        for v in verdicts {
            match v.label {
                Label::Easy => counts.easy += 1,
                Label::Hard => counts.hard += 1,
                Label::Unobtainable => counts.unobtainable += 1,
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub counts: LabelCounts,
    pub filter_model: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub verdicts: Vec<FilterVerdict>,
    pub summary: FilterSummary,
}

/// One verdict per item, in input order. Requests run with at most `max_parallel` in flight.
pub fn filter_pool<R: Responder + ?Sized>(
    items: &[McqItem],
    responder: &R,
    max_parallel: usize,
) -> Result<FilterRun> {
    ensure_unique_ids(items)?;
    let started_at = Utc::now();
    let model = responder.model_id();
    let verdicts = bounded_map(items, max_parallel, |item| {
        match responder.respond(item, &filter_prompt(item)) {
            Ok(response) => classify(item, &response, &model),
            Err(e) => FilterVerdict {
                item_id: item.id.clone(),
                label: Label::Unobtainable,
                response: String::new(),
                correct: false,
                format_ok: false,
                filter_model: model.clone(),
                error: Some(e.to_string()),
            },
        }
    });
    let summary = FilterSummary {
        counts: LabelCounts::tally(&verdicts),
        filter_model: model,
        started_at,
        finished_at: Utc::now(),
    };
    Ok(FilterRun { verdicts, summary })
}

/// Draws `n_hard` Hard and `n_easy` Easy items uniformly without replacement, then shuffles.
pub fn select_training_set(
    verdicts: &[FilterVerdict],
    items: &[McqItem],
    spec: &SelectionSpec,
) -> Result<Vec<McqItem>> {
    let by_id: HashMap<&str, &McqItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut hard = Vec::new();
    let mut easy = Vec::new();
    for v in verdicts {
        let item = *by_id
            .get(v.item_id.as_str())
            .ok_or_else(|| Error::invalid(format!("verdict for unknown item {}", v.item_id)))?;
        match v.label {
            Label::Hard => hard.push(item),
            Label::Easy => easy.push(item),
            Label::Unobtainable => {}
        }
    }
    for (label, pool, needed) in [("hard", &hard, spec.n_hard), ("easy", &easy, spec.n_easy)] {
        if pool.len() < needed {
            return Err(Error::InsufficientPool {
                label: label.to_string(),
                needed,
                available: pool.len(),
                shortfall: needed - pool.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen: Vec<McqItem> = Vec::with_capacity(spec.n_hard + spec.n_easy);
    for (pool, n) in [(&hard, spec.n_hard), (&easy, spec.n_easy)] {
        let mut picks = index::sample(&mut rng, pool.len(), n).into_vec();
        picks.sort_unstable();
        chosen.extend(picks.into_iter().map(|i| pool[i].clone()));
    }
    chosen.shuffle(&mut rng);
    Ok(chosen)
}
