//! Counting glitch-token occurrences in tokenized corpora.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedstore::{TokenId, Vocabulary};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("token id {id} out of range for vocabulary of {n}")]
    OutOfRangeId { id: TokenId, n: usize },
    #[error("{path}:{line}: {source}")]
    BadLine {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Token ids of a corpus, one sequence per document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub documents: Vec<Vec<TokenId>>,
}

impl TokenStream {
    pub fn from_ids(ids: Vec<TokenId>) -> Self {
        Self { documents: vec![ids] }
    }

    /// JSONL: each non-blank line is a JSON array of integer ids.
    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        let mut documents = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let ids = serde_json::from_str(&line).map_err(|source| CorpusError::BadLine {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })?;
            documents.push(ids);
        }
        Ok(Self { documents })
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.documents.iter().flatten().copied()
    }

    pub fn len(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScanSummary {
    #[serde(rename = "glitch_tokens")]
    pub glitch_count: u64,
    #[serde(rename = "tokens")]
    pub total_count: u64,
    #[serde(rename = "glitch_ratio")]
    pub ratio: f64,
}

impl ScanSummary {
    pub fn new(glitch_count: u64, total_count: u64) -> Self {
        let ratio = if total_count == 0 {
            0.0
        } else {
            glitch_count as f64 / total_count as f64
        };
        Self {
            glitch_count,
            total_count,
            ratio,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self::new(
            self.glitch_count + other.glitch_count,
            self.total_count + other.total_count,
        )
    }

    /// Ratio as a percentage string with two decimals, e.g. `4.17%`.
    pub fn percent(&self) -> String {
        format!("{:.2}%", self.ratio * 100.0)
    }
}

/// Counts occurrences of `glitch` ids among the stream. `n` is the vocabulary size.
pub fn scan(stream: &TokenStream, glitch: &HashSet<TokenId>, n: usize) -> Result<ScanSummary, CorpusError> {
    let mut hits = 0u64;
    let mut total = 0u64;
    for id in stream.ids() {
        if id as usize >= n {
            return Err(CorpusError::OutOfRangeId { id, n });
        }
        total += 1;
        hits += u64::from(glitch.contains(&id));
    }
    Ok(ScanSummary::new(hits, total))
}

/// Scans several JSONL files in parallel and sums the summaries.
pub fn scan_files(paths: &[PathBuf], glitch: &HashSet<TokenId>, n: usize) -> Result<ScanSummary, CorpusError> {
    paths
        .par_iter()
        .map(|p| scan(&TokenStream::read_jsonl(p)?, glitch, n))
        .try_reduce(ScanSummary::default, |a, b| Ok(a.merge(b)))
}

/// One step of a greedy tokenization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Token(TokenId),
    Skipped(char),
}

/// Output of [`greedy_tokenize`]. Approximate: not the model's real tokenizer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GreedyTokenization {
    pub stream: TokenStream,
    /// Scalars no vocabulary entry could start with.
    pub unencodable: u64,
    pub segments: Vec<Segment>,
    pub approximate: bool,
}

impl GreedyTokenization {
    /// Token strings and skipped scalars concatenated in order.
    pub fn detokenize(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match *seg {
                Segment::Token(id) => out.push_str(vocab.get(id).unwrap_or_default()),
                Segment::Skipped(c) => out.push(c),
            }
        }
        out
    }
}

/// Longest-prefix match against the vocabulary. Ties between identical
/// strings go to the lower id.
pub fn greedy_tokenize(text: &str, vocab: &Vocabulary) -> GreedyTokenization {
    let mut lookup: std::collections::HashMap<&str, TokenId> = std::collections::HashMap::new();
    let mut max_len = 0;
    for (id, s) in vocab.strings().iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        lookup.entry(s.as_str()).or_insert(id as TokenId);
        max_len = max_len.max(s.len());
    }
    let mut segments = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let mut limit = rest.len().min(max_len);
        while !rest.is_char_boundary(limit) {
            limit -= 1;
        }
        let found = (1..=limit)
            .rev()
            .filter(|&l| rest.is_char_boundary(l))
            .find_map(|l| lookup.get(&rest[..l]).map(|&id| (id, l)));
        match found {
            Some((id, l)) => {
                segments.push(Segment::Token(id));
                rest = &rest[l..];
            }
            None => {
                let c = rest.chars().next().expect("non-empty");
                segments.push(Segment::Skipped(c));
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    let ids: Vec<TokenId> = segments
        .iter()
        .filter_map(|s| match s {
            Segment::Token(id) => Some(*id),
            Segment::Skipped(_) => None,
        })
        .collect();
    GreedyTokenization {
        unencodable: (segments.len() - ids.len()) as u64,
        stream: TokenStream::from_ids(ids),
        segments,
        approximate: true,
    }
}
