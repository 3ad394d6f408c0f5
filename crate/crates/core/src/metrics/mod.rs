//! AUC, impression-weighted group AUC and log-loss.

use std::collections::BTreeMap;

use thiserror::Error;

/// Lower clipping bound for probabilities in [`logloss`].
pub const PROB_CLIP: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("evaluation batch is empty")]
    Empty,
    #[error("misaligned batch: {scores} scores, {labels} labels, {users} user ids")]
    Misaligned { scores: usize, labels: usize, users: usize },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

/// Scores, labels and user ids of one evaluation set, index-aligned.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalBatch {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub user_ids: Vec<u32>,
}

impl EvalBatch {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>, user_ids: Vec<u32>) -> Result<Self, MetricError> {
        let b = EvalBatch {
            scores,
            labels,
            user_ids,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.scores.len() != self.labels.len() || self.scores.len() != self.user_ids.len() {
            return Err(MetricError::Misaligned {
                scores: self.scores.len(),
                labels: self.labels.len(),
                users: self.user_ids.len(),
            });
        }
        if self.scores.is_empty() {
            return Err(MetricError::Empty);
        }
        if let Some(i) = self.scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricError::NonFinite(i));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn push(&mut self, score: f64, label: u8, user_id: u32) {
        self.scores.push(score);
        self.labels.push(label);
        self.user_ids.push(user_id);
    }
}

/// Mann-Whitney AUC from average ranks; tied pairs count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Misaligned {
            scores: scores.len(),
            labels: labels.len(),
            users: scores.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::Undefined("AUC needs both a positive and a negative label"));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 averaged.
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Per-user AUC averaged with impression-count weights over users that have both
/// classes. Returns the value and the number of eligible users.
pub fn gauc_detail(batch: &EvalBatch) -> Result<(f64, usize), MetricError> {
    batch.validate()?;
    let mut groups: BTreeMap<u32, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for ((&s, &l), &u) in batch.scores.iter().zip(&batch.labels).zip(&batch.user_ids) {
        let g = groups.entry(u).or_default();
        g.0.push(s);
        g.1.push(l);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut users = 0;
    for (scores, labels) in groups.values() {
        let pos = labels.iter().filter(|&&l| l == 1).count();
        if pos == 0 || pos == labels.len() {
            continue;
        }
        let w = labels.len() as f64;
        num += w * auc(scores, labels)?;
        den += w;
        users += 1;
    }
    if users == 0 {
        return Err(MetricError::Undefined("GAUC needs a user with both a positive and a negative label"));
    }
    Ok((num / den, users))
}

pub fn gauc(batch: &EvalBatch) -> Result<f64, MetricError> {
    Ok(gauc_detail(batch)?.0)
}

/// Mean binary cross-entropy of probabilities clipped to `[1e-7, 1 - 1e-7]`.
pub fn logloss(probs: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if probs.len() != labels.len() {
        return Err(MetricError::Misaligned {
            scores: probs.len(),
            labels: labels.len(),
            users: probs.len(),
        });
    }
    if probs.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut total = 0.0;
    for (i, (&p, &y)) in probs.iter().zip(labels).enumerate() {
        if !p.is_finite() {
            return Err(MetricError::NonFinite(i));
        }
        let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / probs.len() as f64)
}

/// AUC, GAUC and log-loss of one evaluation set whose scores are logits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSet {
    pub auc: f64,
    pub gauc: f64,
    pub logloss: f64,
}

pub fn evaluate_logits(batch: &EvalBatch) -> Result<MetricSet, MetricError> {
    batch.validate()?;
    let probs: Vec<f64> = batch.scores.iter().map(|&s| crate::numkern::sigmoid(s)).collect();
    Ok(MetricSet {
        auc: auc(&batch.scores, &batch.labels)?,
        gauc: gauc(batch)?,
        logloss: logloss(&probs, &batch.labels)?,
    })
}
