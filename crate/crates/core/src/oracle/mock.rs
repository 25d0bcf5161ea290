use std::collections::HashSet;

use super::prompt::{self, evaluate_response, spell, ProxyTask};
use super::{OracleClient, OracleConfig, OracleError};
use crate::embedstore::{TokenId, Vocabulary};

/// Deterministic stand-in for an LLM. Answers every task correctly except for
/// planted token strings, whose answers are derived from [`corrupt`].
#[derive(Debug, Clone)]
pub struct MockOracle {
    planted: HashSet<String>,
}

impl MockOracle {
    /// Planted ids are resolved to strings, so duplicate vocabulary entries
    /// share the planted status of any of their ids.
    pub fn new(vocab: &Vocabulary, planted: impl IntoIterator<Item = TokenId>) -> Self {
        Self {
            planted: planted
                .into_iter()
                .filter_map(|id| vocab.get(id).map(str::to_owned))
                .collect(),
        }
    }

    pub fn is_planted(&self, token: &str) -> bool {
        self.planted.contains(token)
    }
}

/// Middle scalar replaced by `*` (or `*` itself for tokens of at most one
/// scalar). Falls back to `*` or `#` when normalization would hide the change,
/// so the repetition task always fails.
pub fn corrupt(token: &str) -> String {
    let chars: Vec<char> = token.chars().collect();
    let first = if chars.len() <= 1 {
        "*".to_string()
    } else {
        let mid = chars.len() / 2;
        chars
            .iter()
            .enumerate()
            .map(|(i, &c)| if i == mid { '*' } else { c })
            .collect()
    };
    [first, "*".to_string(), "#".to_string()]
        .into_iter()
        .find(|c| evaluate_response(ProxyTask::Repetition, token, c) == 0)
        .expect("'*' and '#' cannot both normalize to the token")
}

impl OracleClient for MockOracle {
    fn complete(&self, prompt: &str, config: &OracleConfig) -> Result<String, OracleError> {
        let (task, token) = prompt::parse_prompt(prompt)
            .ok_or_else(|| OracleError::Protocol("mock oracle cannot parse prompt".into()))?;
        let answer_for = if self.is_planted(token) {
            corrupt(token)
        } else {
            token.to_string()
        };
        Ok(match task {
            ProxyTask::Repetition => answer_for,
            ProxyTask::Spelling => spell(&answer_for),
            ProxyTask::Length => config.length_unit.count(&answer_for).to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{glitch_test, render_prompt, Ledger};
    use proptest::prelude::*;

    #[test]
    fn corruption_rule() {
        assert_eq!(corrupt("Hello"), "He*lo");
        assert_eq!(corrupt("ab"), "a*");
        assert_eq!(corrupt("x"), "*");
        assert_eq!(corrupt(""), "*");
        assert_eq!(corrupt("*"), "#");
        assert_eq!(corrupt("a\nbcd"), "*");
    }

    #[test]
    fn mock_answers() {
        let vocab = Vocabulary::new(vec!["Hello".into(), "davidjl".into()]);
        let mock = MockOracle::new(&vocab, [1]);
        let cfg = OracleConfig::default();
        let p = render_prompt(ProxyTask::Spelling, "Hello");
        assert_eq!(mock.complete(&p, &cfg).unwrap(), "H-e-l-l-o");
        let p = render_prompt(ProxyTask::Repetition, "davidjl");
        assert_eq!(mock.complete(&p, &cfg).unwrap(), "dav*djl");
        assert!(mock.complete("garbage", &cfg).is_err());
    }

    proptest! {
        #[test]
        fn planted_always_glitch_others_never(tokens in proptest::collection::vec("(?s).{0,8}", 1..6), mask in any::<u8>()) {
            let mut uniq = tokens.clone();
            uniq.sort();
            uniq.dedup();
            let vocab = Vocabulary::new(uniq.clone());
            let planted: Vec<TokenId> = (0..uniq.len() as TokenId).filter(|i| mask & (1 << i) != 0).collect();
            let mock = MockOracle::new(&vocab, planted.iter().copied());
            let ledger = Ledger::default();
            for id in 0..uniq.len() as TokenId {
                let v = glitch_test(id, &vocab, &OracleConfig::default(), &mock, &ledger).unwrap();
                prop_assert_eq!(v.is_glitch, planted.contains(&id));
            }
        }

        #[test]
        fn expected_answer_always_passes(s in "(?s).{0,12}") {
            for task in ProxyTask::ALL {
                let expected = prompt::expected_answer(task, &s);
                prop_assert_eq!(evaluate_response(task, &s, &expected), 1);
            }
        }
    }
}
