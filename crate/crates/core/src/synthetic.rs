//! Seeded synthetic multiple-choice tasks for training and smoke tests.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{option_letter, McqItem, MAX_OPTIONS, MIN_OPTIONS};
use crate::error::{Error, Result};

const CATEGORIES: [&str; 4] = ["anatomy", "pathology", "pharmacology", "physiology"];
const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];
/// Cue words per gold letter; both appear in every question.
const CUES: [[&str; 2]; 10] = [
    ["cardiac", "murmur"],
    ["renal", "glomerular"],
    ["hepatic", "jaundice"],
    ["pulmonary", "alveolar"],
    ["cerebral", "seizure"],
    ["gastric", "ulcer"],
    ["thyroid", "goiter"],
    ["dermal", "rash"],
    ["ocular", "retinal"],
    ["skeletal", "fracture"],
];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    (0..3)
        .map(|_| {
            let onset = ONSETS[rng.random_range(0..ONSETS.len())];
            let nucleus = NUCLEI[rng.random_range(0..NUCLEI.len())];
            format!("{onset}{nucleus}")
        })
        .collect()
}

/// `n` items with `num_options` options each; the gold letter is uniform.
///
/// Each question is the cue pair tied to the gold letter followed by two
/// item-specific pseudo-words, so the answer is learnable from the question
/// text. There is no shared template: words common to every question act as
/// a bias under the hashed features.
pub fn generate(n: usize, num_options: usize, seed: u64) -> Result<Vec<McqItem>> {
    if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&num_options) {
        return Err(Error::invalid(format!(
            "num_options must be in {MIN_OPTIONS}..={MAX_OPTIONS}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..n)
        .map(|i| {
            let words: Vec<String> = (0..2).map(|_| pseudo_word(&mut rng)).collect();
            let gold_index = rng.random_range(0..num_options);
            let [c1, c2] = CUES[gold_index];
            let question = format!("{c1} {c2} {} {}?", words[0], words[1]);
            let options: BTreeMap<String, String> = (0..num_options)
                .map(|k| {
                    (
                        option_letter(k),
                        format!("{} variant {}", pseudo_word(&mut rng), k + 1),
                    )
                })
                .collect();
            let gold = option_letter(gold_index);
            McqItem {
                id: format!("syn-{i:04}"),
                question,
                options,
                gold,
                category: Some(CATEGORIES[i % CATEGORIES.len()].to_string()),
                source: Some("synthetic".to_string()),
            }
        })
        .collect();
    Ok(items)
}
