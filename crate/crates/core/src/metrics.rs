//! Micro/macro precision, recall and ROC AUC for multi-label predictions.
//!
//! Conventions where a ratio has a zero denominator:
//! - no predicted positives → precision 0;
//! - no actual positives → recall 0;
//! - a single-class label has no AUC and is left out of the macro AUC.

use serde::{Deserialize, Serialize};

use crate::error::{LerpError, Result};

/// Default decision threshold: a score `>= 0.5` predicts positive.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Scores and 0/1 targets, both `R × N_Y`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub scores: Vec<Vec<f64>>,
    pub targets: Vec<Vec<u8>>,
    pub threshold: f64,
}

impl PredictionSet {
    pub fn new(scores: Vec<Vec<f64>>, targets: Vec<Vec<u8>>) -> Result<Self> {
        let p = PredictionSet {
            scores,
            targets,
            threshold: DEFAULT_THRESHOLD,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        self.threshold = threshold;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.scores.is_empty() {
            return Err(LerpError::Data("no records to score".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(LerpError::Config(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if self.scores.len() != self.targets.len() {
            return Err(LerpError::Dimension(format!(
                "{} score rows vs {} target rows",
                self.scores.len(),
                self.targets.len()
            )));
        }
        let n = self.n_labels();
        for (s, t) in self.scores.iter().zip(&self.targets) {
            if s.len() != n || t.len() != n {
                return Err(LerpError::Dimension("ragged prediction matrix".into()));
            }
            if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(LerpError::Data("scores must lie in [0, 1]".into()));
            }
            if t.iter().any(|&b| b > 1) {
                return Err(LerpError::Data("targets must be 0 or 1".into()));
            }
        }
        Ok(())
    }

    pub fn n_labels(&self) -> usize {
        self.scores[0].len()
    }

    pub fn n_records(&self) -> usize {
        self.scores.len()
    }

    pub fn column(&self, j: usize) -> (Vec<f64>, Vec<u8>) {
        (
            self.scores.iter().map(|r| r[j]).collect(),
            self.targets.iter().map(|r| r[j]).collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-label confusion counts at the set's threshold.
pub fn confusions(pred: &PredictionSet) -> Vec<Confusion> {
    let mut out = vec![Confusion::default(); pred.n_labels()];
    for (s_row, t_row) in pred.scores.iter().zip(&pred.targets) {
        for (j, c) in out.iter_mut().enumerate() {
            match (s_row[j] >= pred.threshold, t_row[j] == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecisionRecall {
    pub micro_precision: f64,
    pub macro_precision: f64,
    pub micro_recall: f64,
    pub macro_recall: f64,
}

pub fn precision_recall(pred: &PredictionSet) -> Result<PrecisionRecall> {
    pred.validate()?;
    let per = confusions(pred);
    let pooled = per.iter().fold(Confusion::default(), |acc, c| Confusion {
        tp: acc.tp + c.tp,
        fp: acc.fp + c.fp,
        fn_: acc.fn_ + c.fn_,
        tn: acc.tn + c.tn,
    });
    let n = per.len() as f64;
    Ok(PrecisionRecall {
        micro_precision: pooled.precision(),
        macro_precision: per.iter().map(Confusion::precision).sum::<f64>() / n,
        micro_recall: pooled.recall(),
        macro_recall: per.iter().map(Confusion::recall).sum::<f64>() / n,
    })
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. `None` when the targets hold a single class.
///
/// Computed from mid-ranks (Mann-Whitney U) in `O(R log R)`.
pub fn roc_auc(scores: &[f64], targets: &[u8]) -> Option<f64> {
    assert_eq!(
        scores.len(),
        targets.len(),
        "scores and targets differ in length"
    );
    let pos = targets.iter().filter(|&&t| t == 1).count();
    let neg = targets.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives; mid-ranks are half-integers so this
    // stays integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the mid-rank (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| targets[k] == 1).count() as u128;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Some(twice_u as f64 / (2 * p * n) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub roc_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub micro_precision: f64,
    pub macro_precision: f64,
    pub micro_recall: f64,
    pub macro_recall: f64,
    /// `None` when every pooled target has the same class.
    pub micro_roc_auc: Option<f64>,
    /// Mean over labels with a defined AUC; `None` if there are none.
    pub macro_roc_auc: Option<f64>,
    pub per_label: Vec<LabelMetrics>,
}

/// Headline metrics as a flat JSON object.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct FlatMetrics {
    pub micro_precision: f64,
    pub macro_precision: f64,
    pub micro_recall: f64,
    pub macro_recall: f64,
    pub micro_roc_auc: Option<f64>,
    pub macro_roc_auc: Option<f64>,
}

pub fn report(pred: &PredictionSet) -> Result<MetricsReport> {
    let pr = precision_recall(pred)?;
    let per_conf = confusions(pred);
    let per_label: Vec<LabelMetrics> = (0..pred.n_labels())
        .map(|j| {
            let (s, t) = pred.column(j);
            LabelMetrics {
                confusion: per_conf[j],
                precision: per_conf[j].precision(),
                recall: per_conf[j].recall(),
                roc_auc: roc_auc(&s, &t),
            }
        })
        .collect();
    let all_scores: Vec<f64> = pred.scores.iter().flatten().copied().collect();
    let all_targets: Vec<u8> = pred.targets.iter().flatten().copied().collect();
    let defined: Vec<f64> = per_label.iter().filter_map(|l| l.roc_auc).collect();
    Ok(MetricsReport {
        micro_precision: pr.micro_precision,
        macro_precision: pr.macro_precision,
        micro_recall: pr.micro_recall,
        macro_recall: pr.macro_recall,
        micro_roc_auc: roc_auc(&all_scores, &all_targets),
        macro_roc_auc: (!defined.is_empty())
            .then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        per_label,
    })
}

impl MetricsReport {
    pub fn flat(&self) -> FlatMetrics {
        FlatMetrics {
            micro_precision: self.micro_precision,
            macro_precision: self.macro_precision,
            micro_recall: self.micro_recall,
            macro_recall: self.macro_recall,
            micro_roc_auc: self.micro_roc_auc,
            macro_roc_auc: self.macro_roc_auc,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.flat()).expect("metrics serialize")
    }
}
