//! Rule-based classifiers for glitch-token string types and for the symptom
//! shown by a failed proxy-task response.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::prompt::{expected_answer, normalize_response, ProxyTask, PLACEHOLDER};

const BUNDLED_WORDS: &str = include_str!("../data/words.txt");
const BUNDLED_REFUSALS: &str = include_str!("../data/refusal_patterns.txt");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("token string is empty")]
    EmptyToken,
    #[error("word list is empty")]
    EmptyWordList,
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Lowercase dictionary words used for word segmentation and filtering.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordList {
    words: HashSet<String>,
    max_len: usize,
}

impl WordList {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let words: HashSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        let max_len = words.iter().map(String::len).max().unwrap_or(0);
        Self { words, max_len }
    }

    /// One word per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let list = Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        );
        if list.is_empty() {
            return Err(TaxonomyError::EmptyWordList);
        }
        Ok(list)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The word list shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_WORDS).expect("bundled word list is non-empty")
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Words in ascending order, for deterministic iteration.
    pub fn sorted(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.words.iter().map(String::as_str).collect();
        out.sort_unstable();
        out
    }

    /// Splits `s` (case-insensitively) into dictionary words, if possible.
    pub fn segment(&self, s: &str) -> Option<Vec<String>> {
        let lower = s.to_lowercase();
        let bytes = lower.len();
        if bytes == 0 || !lower.is_ascii() {
            return None;
        }
        // back[i] = start of the last word ending at i
        let mut back: Vec<Option<usize>> = vec![None; bytes + 1];
        back[0] = Some(0);
        for end in 1..=bytes {
            let lo = end.saturating_sub(self.max_len);
            back[end] = (lo..end)
                .rev()
                .find(|&start| back[start].is_some() && self.words.contains(&lower[start..end]));
        }
        back[bytes]?;
        let mut parts = Vec::new();
        let mut end = bytes;
        while end > 0 {
            let start = back[end].expect("reachable");
            parts.push(lower[start..end].to_string());
            end = start;
        }
        parts.reverse();
        Some(parts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenTypeLabel {
    WordToken,
    LetterToken,
    CharacterToken,
    LetterCharacterToken,
    SpecialToken,
}

impl TokenTypeLabel {
    pub const ALL: [TokenTypeLabel; 5] = [
        TokenTypeLabel::WordToken,
        TokenTypeLabel::LetterToken,
        TokenTypeLabel::CharacterToken,
        TokenTypeLabel::LetterCharacterToken,
        TokenTypeLabel::SpecialToken,
    ];
}

/// Precedence: non-ASCII, then letter-free, then letters-only (word or
/// letter depending on segmentation), then mixed.
pub fn classify_token_type(token: &str, words: &WordList) -> Result<TokenTypeLabel, TaxonomyError> {
    if token.is_empty() {
        return Err(TaxonomyError::EmptyToken);
    }
    if !token.is_ascii() {
        return Ok(TokenTypeLabel::SpecialToken);
    }
    let s = token.strip_prefix(' ').unwrap_or(token);
    if !s.bytes().any(|b| b.is_ascii_alphabetic()) {
        return Ok(TokenTypeLabel::CharacterToken);
    }
    if s.bytes().all(|b| b.is_ascii_alphabetic()) {
        return Ok(if words.segment(s).is_some() {
            TokenTypeLabel::WordToken
        } else {
            TokenTypeLabel::LetterToken
        });
    }
    Ok(TokenTypeLabel::LetterCharacterToken)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymptomLabel {
    SpellingMistake,
    Incapability,
    HallucinatoryCompletion,
    QuestionRepetition,
    RandomCharacters,
}

/// Tunables for [`classify_symptom_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct SymptomRules {
    /// Lowercased refusal phrases.
    pub refusal_patterns: Vec<String>,
    pub min_template_overlap: usize,
    pub spelling_distance: f64,
}

impl SymptomRules {
    pub fn from_patterns(text: &str) -> Self {
        Self {
            refusal_patterns: text
                .lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect(),
            min_template_overlap: 6,
            spelling_distance: 0.5,
        }
    }
}

impl Default for SymptomRules {
    fn default() -> Self {
        Self::from_patterns(BUNDLED_REFUSALS)
    }
}

const EXTRA_PRIMERS: [&str; 2] = ["Sure! The spelling of this string is:", "Of course!"];

/// Lowercased windows of the template text, placeholder excluded.
fn template_windows(task: ProxyTask, width: usize) -> HashSet<Vec<char>> {
    let mut set = HashSet::new();
    for part in task.template().split(PLACEHOLDER) {
        let chars: Vec<char> = part.to_lowercase().chars().collect();
        for w in chars.windows(width) {
            set.insert(w.to_vec());
        }
    }
    set
}

fn default_windows(task: ProxyTask) -> &'static HashSet<Vec<char>> {
    static CACHE: OnceLock<[HashSet<Vec<char>>; 3]> = OnceLock::new();
    let all = CACHE.get_or_init(|| ProxyTask::ALL.map(|t| template_windows(t, 6)));
    &all[task as usize]
}

fn repeats_question(task: ProxyTask, response: &str, rules: &SymptomRules) -> bool {
    let normalized = normalize_response(response).trim_end_matches(':').to_lowercase();
    let is_primer = ProxyTask::ALL
        .iter()
        .map(|t| t.primer())
        .chain(EXTRA_PRIMERS)
        .any(|p| p.trim_end_matches(':').to_lowercase() == normalized);
    if is_primer {
        return true;
    }
    let width = rules.min_template_overlap.max(1);
    let owned;
    let windows = if width == 6 {
        default_windows(task)
    } else {
        owned = template_windows(task, width);
        &owned
    };
    let chars: Vec<char> = response.trim().to_lowercase().chars().collect();
    chars.windows(width).any(|w| windows.contains(w))
}

fn has_letters(s: &str) -> bool {
    s.chars().any(char::is_alphabetic)
}

fn has_alphanumerics(s: &str) -> bool {
    s.chars().any(char::is_alphanumeric)
}

/// Normalized Levenshtein distance (by the longer length), case-insensitive.
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    let (a, b) = (a.to_lowercase(), b.to_lowercase());
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    strsim::levenshtein(&a, &b) as f64 / longest as f64
}

pub fn classify_symptom(task: ProxyTask, token: &str, response: &str) -> SymptomLabel {
    classify_symptom_with(task, token, response, &SymptomRules::default())
}

/// Classifies a failed response. Rules apply in order; the first match wins.
pub fn classify_symptom_with(
    task: ProxyTask,
    token: &str,
    response: &str,
    rules: &SymptomRules,
) -> SymptomLabel {
    if task == ProxyTask::Length {
        return SymptomLabel::HallucinatoryCompletion;
    }
    let lower = response.to_lowercase();
    if rules.refusal_patterns.iter().any(|p| lower.contains(p)) {
        return SymptomLabel::Incapability;
    }
    if repeats_question(task, response, rules) {
        return SymptomLabel::QuestionRepetition;
    }
    let normalized = normalize_response(response);
    if (!has_letters(normalized) && !has_letters(token)) || !has_alphanumerics(normalized) {
        return SymptomLabel::RandomCharacters;
    }
    let expected = expected_answer(task, token);
    if normalized_edit_distance(normalized, normalize_response(&expected)) <= rules.spelling_distance {
        return SymptomLabel::SpellingMistake;
    }
    SymptomLabel::HallucinatoryCompletion
}

/// One row of a classification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedToken {
    pub id: u32,
    #[serde(rename = "type")]
    pub token_type: TokenTypeLabel,
    pub symptom: Option<SymptomLabel>,
}
