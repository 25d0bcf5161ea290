//! Few-shot prompt templates, expected answers and response evaluation for
//! the three proxy tasks.

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

pub const PLACEHOLDER: &str = "<token_string>";

const REPETITION_TEMPLATE: &str = include_str!("../../templates/repetition.txt");
const SPELLING_TEMPLATE: &str = include_str!("../../templates/spelling.txt");
const LENGTH_TEMPLATE: &str = include_str!("../../templates/length.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyTask {
    Repetition,
    Spelling,
    Length,
}

impl ProxyTask {
    pub const ALL: [ProxyTask; 3] = [ProxyTask::Repetition, ProxyTask::Spelling, ProxyTask::Length];

    pub fn template(self) -> &'static str {
        match self {
            ProxyTask::Repetition => REPETITION_TEMPLATE,
            ProxyTask::Spelling => SPELLING_TEMPLATE,
            ProxyTask::Length => LENGTH_TEMPLATE,
        }
    }

    /// The affirmative answer prefix the template primes the model with.
    pub fn primer(self) -> &'static str {
        match self {
            ProxyTask::Repetition => "Of course! Here is the repeated string:",
            ProxyTask::Spelling => "Of course! The spelling of the string is:",
            ProxyTask::Length => "The length of this string is",
        }
    }

    fn split_template(self) -> (&'static str, &'static str) {
        self.template()
            .split_once(PLACEHOLDER)
            .expect("template carries a placeholder")
    }
}

/// How "length" is counted for the length task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthUnit {
    #[default]
    Scalars,
    Bytes,
    Graphemes,
}

impl LengthUnit {
    pub fn count(self, s: &str) -> usize {
        match self {
            LengthUnit::Scalars => s.chars().count(),
            LengthUnit::Bytes => s.len(),
            LengthUnit::Graphemes => s.graphemes(true).count(),
        }
    }
}

pub fn render_prompt(task: ProxyTask, token: &str) -> String {
    let (head, tail) = task.split_template();
    let mut out = String::with_capacity(head.len() + token.len() + tail.len());
    out.push_str(head);
    out.push_str(token);
    out.push_str(tail);
    out
}

/// Recovers the task and token string from a prompt built by [`render_prompt`].
pub fn parse_prompt(prompt: &str) -> Option<(ProxyTask, &str)> {
    ProxyTask::ALL.into_iter().find_map(|task| {
        let (head, tail) = task.split_template();
        prompt
            .strip_prefix(head)
            .and_then(|rest| rest.strip_suffix(tail))
            .map(|token| (task, token))
    })
}

pub fn spell(s: &str) -> String {
    let mut out = String::with_capacity(s.len() * 2);
    for (i, c) in s.chars().enumerate() {
        if i > 0 {
            out.push('-');
        }
        out.push(c);
    }
    out
}

pub fn expected_answer(task: ProxyTask, token: &str) -> String {
    expected_answer_with(task, token, LengthUnit::Scalars)
}

pub fn expected_answer_with(task: ProxyTask, token: &str, unit: LengthUnit) -> String {
    match task {
        ProxyTask::Repetition => token.to_string(),
        ProxyTask::Spelling => spell(token),
        ProxyTask::Length => unit.count(token).to_string(),
    }
}

/// Trim, keep the first line, drop a leading `:` left over from the prompt
/// primer, drop one trailing period and one pair of wrapping quotes.
pub fn normalize_response(response: &str) -> &str {
    let mut s = response.trim();
    s = s.lines().next().unwrap_or("").trim();
    if let Some(rest) = s.strip_prefix(':') {
        s = rest.trim();
    }
    if let Some(rest) = s.strip_suffix('.') {
        s = rest;
    }
    for q in ['"', '\'', '`'] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            s = &s[1..s.len() - 1];
            break;
        }
    }
    s
}

pub fn first_integer(s: &str) -> Option<u64> {
    let start = s.find(|c: char| c.is_ascii_digit())?;
    let digits: String = s[start..].chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

/// 1 when the response counts as the expected outcome, else 0.
pub fn evaluate_response(task: ProxyTask, token: &str, response: &str) -> u8 {
    evaluate_response_with(task, token, response, LengthUnit::Scalars)
}

pub fn evaluate_response_with(task: ProxyTask, token: &str, response: &str, unit: LengthUnit) -> u8 {
    let ok = match task {
        ProxyTask::Repetition | ProxyTask::Spelling => {
            let expected = expected_answer_with(task, token, unit);
            normalize_response(response) == normalize_response(&expected)
        }
        ProxyTask::Length => first_integer(response) == Some(unit.count(token) as u64),
    };
    u8::from(ok)
}
