//! Prompt templates sent to external models.
//!
//! Both templates ask for reasoning inside `<think>` tags followed by the
//! option letter inside `<answer>` tags, the structure the reward parser
//! checks. The wording is a reconstruction, not a verbatim copy of any
//! published prompt.

use crate::data::McqItem;

fn options_block(item: &McqItem) -> String {
    item.options
        .iter()
        .map(|(letter, text)| format!("{letter}. {text}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Prompt used to obtain one response per candidate item during filtering.
pub fn filter_prompt(item: &McqItem) -> String {
    format!(
        "Answer the following multiple-choice question.\n\
         First reason step by step inside <think> </think> tags, then give only the letter \
         of the correct option inside <answer> </answer> tags.\n\
         Example: <think>reasoning here</think>\n<answer>A</answer>\n\n\
         Question: {}\n{}",
        item.question,
        options_block(item)
    )
}

/// Training-time conversation template: system instruction, then the question.
pub fn training_prompt(item: &McqItem) -> String {
    format!(
        "A conversation between User and Assistant. The user asks a question, and the assistant \
         solves it. The assistant first thinks about the reasoning process in the mind and then \
         provides the user with the answer. The reasoning process and answer are enclosed within \
         <think> </think> and <answer> </answer> tags, respectively, i.e., \
         <think> reasoning process here </think>\n<answer> answer here </answer>.\n\
         User: {}\n{}\nAssistant:",
        item.question,
        options_block(item)
    )
}
