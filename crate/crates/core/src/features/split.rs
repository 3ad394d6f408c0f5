use std::ops::Range;

use super::io::PeriodData;
use super::FeatureError;

/// Index ranges into one period's target records.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeriodSplit {
    /// Leading slice evaluated before the model trains on this period. Empty for period 0.
    pub eval: Range<usize>,
    pub train: Range<usize>,
}

/// Prequential split of the target stream: at each boundary `t → t+1` the first
/// `fraction` of period `t+1` is held out for evaluation, the rest is training data.
#[derive(Clone, Debug, PartialEq)]
pub struct PrequentialSplit {
    pub fraction: f64,
    pub periods: Vec<PeriodSplit>,
}

pub fn eval_len(n: usize, fraction: f64) -> usize {
    // The epsilon absorbs representation error, e.g. 0.2 * 20000.
    ((fraction * n as f64) + 1e-9).floor() as usize
}

pub fn split_prequential(periods: &[PeriodData], fraction: f64) -> Result<PrequentialSplit, FeatureError> {
    if periods.len() < 2 {
        return Err(FeatureError::Protocol(format!(
            "prequential evaluation needs at least 2 periods, got {}",
            periods.len()
        )));
    }
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(FeatureError::Protocol(format!("eval fraction {fraction} must lie in (0, 1)")));
    }
    let splits = periods
        .iter()
        .enumerate()
        .map(|(p, data)| {
            let n = data.target.len();
            let k = if p == 0 { 0 } else { eval_len(n, fraction) };
            PeriodSplit { eval: 0..k, train: k..n }
        })
        .collect();
    Ok(PrequentialSplit {
        fraction,
        periods: splits,
    })
}

impl PrequentialSplit {
    pub fn eval_records<'a>(&self, periods: &'a [PeriodData], period: usize) -> &'a [crate::features::Record] {
        &periods[period].target[self.periods[period].eval.clone()]
    }

    pub fn train_records<'a>(&self, periods: &'a [PeriodData], period: usize) -> &'a [crate::features::Record] {
        &periods[period].target[self.periods[period].train.clone()]
    }
}
