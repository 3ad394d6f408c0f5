use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::plan::{MethodKind, MethodSpec, TransferMode};
use super::run::MethodOutcome;
use super::ContinualError;

pub const RESULTS_HEADER: &str = "method,mode,seed,boundary,auc,gauc,logloss";
pub const SUMMARY_HEADER: &str =
    "rank,method,mode,boundary,seeds,auc_median,gauc_median,logloss_median,auc_delta_pct,gauc_delta_pct";

/// One line of the results CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResultRow {
    pub spec: MethodSpec,
    pub seed: u64,
    pub boundary: usize,
    pub auc: f64,
    pub gauc: f64,
    pub logloss: f64,
}

pub fn outcome_rows(outcome: &MethodOutcome) -> Vec<ResultRow> {
    outcome
        .metrics
        .iter()
        .map(|m| ResultRow {
            spec: outcome.spec,
            seed: outcome.seed,
            boundary: m.boundary,
            auc: m.metrics.auc,
            gauc: m.metrics.gauc,
            logloss: m.metrics.logloss,
        })
        .collect()
}

/// Floats use the shortest representation that parses back to the same value.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.spec.kind, r.spec.mode, r.seed, r.boundary, r.auc, r.gauc, r.logloss
        );
    }
    out
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>, ContinualError> {
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err(ContinualError::Plan(format!("results file must start with `{RESULTS_HEADER}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = |m: String| ContinualError::Plan(format!("results line {}: {m}", i + 2));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(bad(format!("expected 7 columns, got {}", cols.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
            Ok(ResultRow {
                spec: MethodSpec::new(
                    cols[0].parse::<MethodKind>().map_err(bad)?,
                    cols[1].parse::<TransferMode>().map_err(bad)?,
                ),
                seed: cols[2].parse().map_err(|_| bad(format!("bad seed `{}`", cols[2])))?,
                boundary: cols[3].parse().map_err(|_| bad(format!("bad boundary `{}`", cols[3])))?,
                auc: num(cols[4])?,
                gauc: num(cols[5])?,
                logloss: num(cols[6])?,
            })
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Medians across seeds for one method at one boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryRow {
    pub rank: usize,
    pub spec: MethodSpec,
    pub boundary: usize,
    pub seeds: usize,
    pub auc: f64,
    pub gauc: f64,
    pub logloss: f64,
    /// `(median - reference median) * 100`, i.e. percentage points.
    pub auc_delta_pct: Option<f64>,
    pub gauc_delta_pct: Option<f64>,
}

/// GAUC comparisons against the reference over matching (seed, boundary) pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WinLoss {
    pub spec: MethodSpec,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub reference: MethodSpec,
    pub rows: Vec<SummaryRow>,
    pub win_loss: Vec<WinLoss>,
}

impl Report {
    pub fn median(&self, spec: MethodSpec, boundary: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.spec == spec && r.boundary == boundary)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(SUMMARY_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.rank,
                r.spec.kind,
                r.spec.mode,
                r.boundary,
                r.seeds,
                r.auc,
                r.gauc,
                r.logloss,
                opt(r.auc_delta_pct),
                opt(r.gauc_delta_pct)
            );
        }
        out
    }

    /// Fixed-width table followed by the win/loss summary.
    pub fn render(&self) -> String {
        let pct = |v: Option<f64>| match v {
            Some(x) => format!("{x:+.2}%"),
            None => "n/a".to_string(),
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<4} {:<20} {:<10} {:>8} {:>5} {:>7} {:>7} {:>7} {:>8} {:>8}",
            "rank", "method", "mode", "boundary", "seeds", "auc", "gauc", "logloss", "d_auc", "d_gauc"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<4} {:<20} {:<10} {:>8} {:>5} {:>7.4} {:>7.4} {:>7.4} {:>8} {:>8}",
                r.rank,
                r.spec.kind.name(),
                r.spec.mode.name(),
                r.boundary,
                r.seeds,
                r.auc,
                r.gauc,
                r.logloss,
                pct(r.auc_delta_pct),
                pct(r.gauc_delta_pct)
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "deltas and GAUC win/loss/tie counts are relative to {}", self.reference);
        for w in &self.win_loss {
            let _ = writeln!(
                out,
                "{:<31} {:>3} win {:>3} loss {:>3} tie",
                w.spec.to_string(),
                w.wins,
                w.losses,
                w.ties
            );
        }
        out
    }
}

/// Ranks methods by median GAUC at their last boundary and reports per-boundary
/// medians with deltas against Base (or the first method when Base is absent).
pub fn compare_report(rows: &[ResultRow]) -> Result<Report, ContinualError> {
    if rows.is_empty() {
        return Err(ContinualError::Plan("no completed runs to compare".into()));
    }
    let mut order: Vec<MethodSpec> = Vec::new();
    let mut groups: BTreeMap<(MethodSpec, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        if !order.contains(&r.spec) {
            order.push(r.spec);
        }
        groups.entry((r.spec, r.boundary)).or_default().push(r);
    }
    let base = MethodSpec::new(MethodKind::Base, TransferMode::NoTransfer);
    let reference = if order.contains(&base) { base } else { order[0] };

    let summarize = |spec: MethodSpec, boundary: usize| -> (usize, f64, f64, f64) {
        let g = &groups[&(spec, boundary)];
        let pick = |f: fn(&ResultRow) -> f64| median(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
        (g.len(), pick(|r| r.auc), pick(|r| r.gauc), pick(|r| r.logloss))
    };

    let mut per_method: Vec<(MethodSpec, Vec<SummaryRow>)> = order
        .iter()
        .map(|&spec| {
            let rows = groups
                .keys()
                .filter(|(s, _)| *s == spec)
                .map(|&(_, b)| {
                    let (seeds, auc, gauc, logloss) = summarize(spec, b);
                    let reference_medians = groups.contains_key(&(reference, b)).then(|| summarize(reference, b));
                    SummaryRow {
                        rank: 0,
                        spec,
                        boundary: b,
                        seeds,
                        auc,
                        gauc,
                        logloss,
                        auc_delta_pct: reference_medians.map(|m| (auc - m.1) * 100.0),
                        gauc_delta_pct: reference_medians.map(|m| (gauc - m.2) * 100.0),
                    }
                })
                .collect();
            (spec, rows)
        })
        .collect();
    // Stable sort keeps first-seen order among equal scores.
    per_method.sort_by(|a, b| {
        let last = |rows: &Vec<SummaryRow>| rows.last().map_or(f64::NEG_INFINITY, |r| r.gauc);
        last(&b.1).total_cmp(&last(&a.1))
    });
    let mut summary = Vec::new();
    for (i, (_, rows)) in per_method.iter_mut().enumerate() {
        for r in rows.iter_mut() {
            r.rank = i + 1;
        }
        summary.extend(rows.iter().copied());
    }

    let mut reference_gauc: BTreeMap<(u64, usize), f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.spec == reference) {
        reference_gauc.insert((r.seed, r.boundary), r.gauc);
    }
    let win_loss = per_method
        .iter()
        .map(|(spec, _)| {
            let mut w = WinLoss {
                spec: *spec,
                wins: 0,
                losses: 0,
                ties: 0,
            };
            for r in rows.iter().filter(|r| r.spec == *spec) {
                match reference_gauc.get(&(r.seed, r.boundary)) {
                    Some(&g) if r.gauc > g => w.wins += 1,
                    Some(&g) if r.gauc < g => w.losses += 1,
                    Some(_) => w.ties += 1,
                    None => {}
                }
            }
            w
        })
        .collect();
    Ok(Report {
        reference,
        rows: summary,
        win_loss,
    })
}
