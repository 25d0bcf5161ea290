use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::embedstore::TokenId;
use crate::oracle::BudgetLedger;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp as f64, (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp as f64, (self.tp + self.fn_) as f64)
    }
}

/// `num / den`, or 0 when the denominator is 0.
pub fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalSummary {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    /// Set when precision was 0/0 and reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub ledger: BudgetLedger,
}

pub fn score(reported: &BTreeSet<TokenId>, truth: &BTreeSet<TokenId>) -> EvalSummary {
    let tp = reported.intersection(truth).count() as u64;
    let counts = ConfusionCounts {
        tp,
        fp: reported.len() as u64 - tp,
        fn_: truth.len() as u64 - tp,
    };
    EvalSummary {
        counts,
        precision: counts.precision(),
        recall: counts.recall(),
        precision_undefined: reported.is_empty(),
        recall_undefined: truth.is_empty(),
        ledger: BudgetLedger::default(),
    }
}

pub fn score_with_ledger(
    reported: &BTreeSet<TokenId>,
    truth: &BTreeSet<TokenId>,
    ledger: BudgetLedger,
) -> EvalSummary {
    EvalSummary {
        ledger,
        ..score(reported, truth)
    }
}
