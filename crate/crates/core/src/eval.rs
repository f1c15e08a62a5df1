//! Data splits, rolling settlement validation folds, leakage guards,
//! hyperparameter selection and evaluation metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::claims::Dataset;
use crate::env::Transition;
use crate::error::{Error, Result};
use crate::fnn::FnnRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    /// Random by claim, ignoring time. Leaks future information.
    Nsc,
    /// Claims settled by the boundary.
    Csc,
    /// Every development up to the boundary.
    Ts,
}

impl FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nsc" => Ok(SplitKind::Nsc),
            "csc" => Ok(SplitKind::Csc),
            "ts" => Ok(SplitKind::Ts),
            other => Err(Error::Config(format!("unknown split kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub boundary: u32,
    /// Training share of claims for the naive split.
    pub nsc_train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(kind: SplitKind, boundary: u32) -> Self {
        SplitSpec {
            kind,
            boundary,
            nsc_train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    /// Claims notified by the boundary and still open at it.
    pub test_claims: Vec<u64>,
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    let b = spec.boundary;
    if b == 0 || b > ds.max_calendar_period {
        return Err(Error::Config(format!(
            "split boundary {b} outside the data horizon 1..={}",
            ds.max_calendar_period
        )));
    }
    let open_at_b = |ds: &Dataset| -> Vec<u64> {
        ds.claims
            .iter()
            .filter(|c| c.notification_period <= b && !c.is_settled_by(b))
            .map(|c| c.claim_no)
            .collect()
    };
    match spec.kind {
        SplitKind::Ts => Ok(Split {
            train: ds.truncate_at(b),
            test_claims: open_at_b(ds),
        }),
        SplitKind::Csc => Ok(Split {
            train: ds.filter(|c| c.is_settled_by(b)),
            test_claims: open_at_b(ds),
        }),
        SplitKind::Nsc => {
            let mut ids: Vec<u64> = ds.claims.iter().map(|c| c.claim_no).collect();
            ids.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
            let n_train = (ids.len() as f64 * spec.nsc_train_fraction).round() as usize;
            let train_ids: BTreeSet<u64> = ids[..n_train].iter().copied().collect();
            Ok(Split {
                train: ds.filter(|c| train_ids.contains(&c.claim_no)),
                test_claims: ids[n_train..].to_vec(),
            })
        }
    }
}

/// Interval bounds `(start, end)` partitioning `1..=horizon` into `k`
/// intervals of `horizon / k` periods, the last absorbing the remainder.
pub fn rsv_intervals(horizon: u32, k: usize) -> Result<Vec<(u32, u32)>> {
    if k < 2 {
        return Err(Error::Config("rolling settlement validation needs k >= 2".into()));
    }
    let len = horizon / k as u32;
    if len == 0 {
        return Err(Error::Config(format!("horizon {horizon} too short for {k} intervals")));
    }
    Ok((0..k as u32)
        .map(|i| {
            let start = i * len + 1;
            let end = if i + 1 == k as u32 { horizon } else { (i + 1) * len };
            (start, end)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    /// 1-based round index; trains on `S_1..S_index`.
    pub index: usize,
    pub boundary: u32,
    pub next_boundary: u32,
    /// Every development observed by the boundary.
    pub rl_train: Dataset,
    /// Claims settled by the boundary.
    pub fnn_train: Dataset,
    /// Claims notified by the boundary that settle in the next interval.
    pub validation: Vec<u64>,
}

/// Expanding-window folds over training data observed up to its horizon.
pub fn rsv_folds(train: &Dataset, k: usize) -> Result<Vec<Fold>> {
    let intervals = rsv_intervals(train.max_calendar_period, k)?;
    let mut folds = Vec::with_capacity(k - 1);
    for i in 0..k - 1 {
        let b = intervals[i].1;
        let nb = intervals[i + 1].1;
        let validation: Vec<u64> = train
            .claims
            .iter()
            .filter(|c| c.notification_period <= b && c.settlement_period.is_some_and(|s| s > b && s <= nb))
            .map(|c| c.claim_no)
            .collect();
        if validation.is_empty() {
            return Err(Error::EmptyFold { interval: i + 2 });
        }
        folds.push(Fold {
            index: i + 1,
            boundary: b,
            next_boundary: nb,
            rl_train: train.truncate_at(b),
            fnn_train: train.filter(|c| c.is_settled_by(b)),
            validation,
        });
    }
    Ok(folds)
}

/// Every RL training transition and every record of the training data
/// lies at or before the boundary.
pub fn check_rl_training(data: &Dataset, transitions: &[Transition], boundary: u32) -> Result<()> {
    for c in &data.claims {
        if let Some(r) = c.dev_records.iter().find(|r| r.calendar_period > boundary) {
            return Err(Error::Leakage(format!(
                "claim {} has a training record at calendar period {} > {boundary}",
                c.claim_no, r.calendar_period
            )));
        }
        if c.transactions.iter().any(|t| t.period() > boundary) {
            return Err(Error::Leakage(format!("claim {} has transactions after {boundary}", c.claim_no)));
        }
    }
    if let Some(t) = transitions.iter().find(|t| t.calendar_period > boundary) {
        return Err(Error::Leakage(format!(
            "transition of claim {} at calendar period {} > {boundary}",
            t.claim_no, t.calendar_period
        )));
    }
    Ok(())
}

/// Every supervised training row comes from a claim settled by the boundary.
pub fn check_fnn_training(source: &Dataset, rows: &[FnnRow], boundary: u32) -> Result<()> {
    for r in rows {
        let settled = source.claim(r.claim_no).is_some_and(|c| c.is_settled_by(boundary));
        if !settled {
            return Err(Error::Leakage(format!(
                "training row from claim {} which is not settled by {boundary}",
                r.claim_no
            )));
        }
    }
    Ok(())
}

/// Every validation claim settles strictly after the boundary.
pub fn check_validation(source: &Dataset, claims: &[u64], boundary: u32) -> Result<()> {
    for id in claims {
        let ok = source
            .claim(*id)
            .is_some_and(|c| c.settlement_period.is_none_or(|s| s > boundary));
        if !ok {
            return Err(Error::Leakage(format!("validation claim {id} settles by the boundary {boundary}")));
        }
    }
    Ok(())
}

/// Runs all three guards on a fold.
pub fn check_fold(fold: &Fold, source: &Dataset, transitions: &[Transition], rows: &[FnnRow]) -> Result<()> {
    check_rl_training(&fold.rl_train, transitions, fold.boundary)?;
    check_fnn_training(&fold.fnn_train, rows, fold.boundary)?;
    check_validation(source, &fold.validation, fold.boundary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub ratio: Option<f64>,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub index: usize,
    pub mean_distance: Option<f64>,
    pub mean_rmse: f64,
    pub fold_ratios: Vec<Option<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult<C> {
    pub best_index: usize,
    pub best: C,
    pub scores: Vec<GridScore>,
}

/// Picks the configuration whose fold-averaged `|relative OCL - 1|` is
/// smallest; ties go to lower RMSE, then to grid order. A configuration
/// failing on any fold is invalid.
pub fn tune<C, F, T>(grid: &[C], folds: &[T], mut evaluate: F) -> Result<TuneResult<C>>
where
    C: Clone,
    F: FnMut(&C, &T) -> Result<FoldScore>,
{
    if grid.is_empty() {
        return Err(Error::Config("tuning grid is empty".into()));
    }
    if folds.is_empty() {
        return Err(Error::Config("tuning needs at least one fold".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for (index, c) in grid.iter().enumerate() {
        let mut ratios = Vec::new();
        let mut rmses = Vec::new();
        let mut error = None;
        for f in folds {
            match evaluate(c, f) {
                Ok(s) => {
                    ratios.push(s.ratio);
                    rmses.push(s.rmse);
                }
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        let mean_distance = if error.is_none() && ratios.iter().all(Option::is_some) {
            Some(ratios.iter().map(|r| (r.expect("checked") - 1.0).abs()).sum::<f64>() / ratios.len() as f64)
        } else {
            None
        };
        let mean_rmse = if rmses.is_empty() {
            f64::INFINITY
        } else {
            rmses.iter().sum::<f64>() / rmses.len() as f64
        };
        scores.push(GridScore {
            index,
            mean_distance,
            mean_rmse,
            fold_ratios: ratios,
            error,
        });
    }
    let best = scores
        .iter()
        .filter(|s| s.mean_distance.is_some_and(f64::is_finite))
        .min_by(|a, b| {
            let (da, db) = (a.mean_distance.expect("filtered"), b.mean_distance.expect("filtered"));
            da.total_cmp(&db)
                .then(a.mean_rmse.total_cmp(&b.mean_rmse))
                .then(a.index.cmp(&b.index))
        })
        .ok_or_else(|| Error::Data("every tuning configuration failed".into()))?;
    Ok(TuneResult {
        best_index: best.index,
        best: grid[best.index].clone(),
        scores,
    })
}

/// One claim's prediction at the valuation date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub claim_no: u64,
    pub accident_period: u32,
    pub psn: u32,
    pub pred: f64,
    pub actual: f64,
    pub ultimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Overall,
    Ap,
    Psn,
}

impl GroupBy {
    fn key(self, r: &EvalRecord) -> u32 {
        match self {
            GroupBy::Overall => 0,
            GroupBy::Ap => r.accident_period,
            GroupBy::Psn => r.psn,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupBy::Overall => "overall",
            GroupBy::Ap => "ap",
            GroupBy::Psn => "psn",
        }
    }
}

/// `sum(pred) / sum(actual)` per group; `None` where the true total is zero.
/// The overall group has key 0.
pub fn relative_ocl(records: &[EvalRecord], by: GroupBy) -> BTreeMap<u32, Option<f64>> {
    let mut sums: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for r in records {
        let e = sums.entry(by.key(r)).or_default();
        e.0 += r.pred;
        e.1 += r.actual;
    }
    sums.into_iter()
        .map(|(k, (p, a))| (k, (a > 0.0).then(|| p / a)))
        .collect()
}

pub fn overall_ratio(records: &[EvalRecord]) -> Option<f64> {
    relative_ocl(records, GroupBy::Overall).get(&0).copied().flatten()
}

pub fn rmse_per_claim(records: &[EvalRecord], by: GroupBy) -> BTreeMap<u32, f64> {
    let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(by.key(r)).or_default();
        e.0 += (r.pred - r.actual).powi(2);
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, (s / n as f64).sqrt())).collect()
}

/// Cumulative share of total true OCL, ordered by accident period or PSN.
pub fn ocl_share_curve(records: &[EvalRecord], by: GroupBy) -> Vec<(u32, f64)> {
    let mut sums: BTreeMap<u32, f64> = BTreeMap::new();
    for r in records {
        *sums.entry(by.key(r)).or_default() += r.actual;
    }
    let total: f64 = sums.values().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let mut cum = 0.0;
    let n = sums.len();
    sums.into_iter()
        .enumerate()
        .map(|(k, (key, v))| {
            cum += v;
            (key, if k + 1 == n { 1.0 } else { cum / total })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges on the `exp(a)` scale, log-spaced over `[1/K, K]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub by_psn: BTreeMap<u32, Vec<usize>>,
}

/// Histogram of `exp(a)` over `(psn, action)` pairs. Values outside the
/// range fall into the edge bins.
pub fn action_histogram(actions: &[(u32, f64)], bins: usize, k: f64, by_psn: bool) -> Result<Histogram> {
    if bins == 0 || bins % 2 == 0 {
        return Err(Error::Config(format!("histogram needs an odd number of bins, got {bins}")));
    }
    if !(k > 1.0) {
        return Err(Error::Config("K must be > 1".into()));
    }
    let l = k.ln();
    let width = 2.0 * l / bins as f64;
    let edges = (0..=bins).map(|i| (-l + width * i as f64).exp()).collect();
    let bin_of = |a: f64| (((a + l) / width).floor().max(0.0) as usize).min(bins - 1);
    let mut counts = vec![0; bins];
    let mut per: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (psn, a) in actions {
        let b = bin_of(*a);
        counts[b] += 1;
        if by_psn && *psn <= 10 {
            per.entry(*psn).or_insert_with(|| vec![0; bins])[b] += 1;
        }
    }
    Ok(Histogram {
        edges,
        counts,
        by_psn: per,
    })
}

/// Relative OCL for claims split into thirds by ultimate size. Claims tied
/// at a cut point go to the lower third.
pub fn size_tercile_report(records: &[EvalRecord]) -> [Option<f64>; 3] {
    if records.is_empty() {
        return [None; 3];
    }
    let mut ults: Vec<f64> = records.iter().map(|r| r.ultimate).collect();
    ults.sort_by(f64::total_cmp);
    let n = ults.len();
    let cut1 = ults[n.div_ceil(3) - 1];
    let cut2 = ults[(2 * n).div_ceil(3) - 1];
    let mut sums = [(0.0, 0.0); 3];
    for r in records {
        let t = if r.ultimate <= cut1 {
            0
        } else if r.ultimate <= cut2 {
            1
        } else {
            2
        };
        sums[t].0 += r.pred;
        sums[t].1 += r.actual;
    }
    sums.map(|(p, a)| (a > 0.0).then(|| p / a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_claims: usize,
    pub relative_ocl: Option<f64>,
    pub relative_by_ap: BTreeMap<u32, Option<f64>>,
    pub relative_by_psn: BTreeMap<u32, Option<f64>>,
    pub rmse: Option<f64>,
    pub rmse_by_ap: BTreeMap<u32, f64>,
    pub rmse_by_psn: BTreeMap<u32, f64>,
    pub share_by_ap: Vec<(u32, f64)>,
    pub share_by_psn: Vec<(u32, f64)>,
    pub size_terciles: [Option<f64>; 3],
}

pub fn metrics_report(records: &[EvalRecord]) -> MetricsReport {
    MetricsReport {
        n_claims: records.len(),
        relative_ocl: overall_ratio(records),
        relative_by_ap: relative_ocl(records, GroupBy::Ap),
        relative_by_psn: relative_ocl(records, GroupBy::Psn),
        rmse: rmse_per_claim(records, GroupBy::Overall).get(&0).copied(),
        rmse_by_ap: rmse_per_claim(records, GroupBy::Ap),
        rmse_by_psn: rmse_per_claim(records, GroupBy::Psn),
        share_by_ap: ocl_share_curve(records, GroupBy::Ap),
        share_by_psn: ocl_share_curve(records, GroupBy::Psn),
        size_terciles: size_tercile_report(records),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Long-format metrics: `model, metric, group, key, value`.
pub fn write_metrics_csv<W: Write>(rows: &[(&str, &MetricsReport)], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let to_err = |e: csv::Error| Error::Data(format!("writing metrics: {e}"));
    wtr.write_record(["model", "metric", "group", "key", "value"]).map_err(to_err)?;
    for (model, m) in rows {
        let mut rec = |metric: &str, group: &str, key: String, value: String| {
            wtr.write_record([*model, metric, group, key.as_str(), value.as_str()])
        };
        rec("relative_ocl", "overall", "all".into(), fmt_opt(m.relative_ocl)).map_err(to_err)?;
        rec("rmse", "overall", "all".into(), fmt_opt(m.rmse)).map_err(to_err)?;
        for (k, v) in &m.relative_by_ap {
            rec("relative_ocl", "ap", k.to_string(), fmt_opt(*v)).map_err(to_err)?;
        }
        for (k, v) in &m.relative_by_psn {
            rec("relative_ocl", "psn", k.to_string(), fmt_opt(*v)).map_err(to_err)?;
        }
        for (k, v) in &m.rmse_by_ap {
            rec("rmse", "ap", k.to_string(), v.to_string()).map_err(to_err)?;
        }
        for (k, v) in &m.rmse_by_psn {
            rec("rmse", "psn", k.to_string(), v.to_string()).map_err(to_err)?;
        }
        for (k, v) in &m.share_by_ap {
            rec("ocl_share", "ap", k.to_string(), v.to_string()).map_err(to_err)?;
        }
        for (k, v) in &m.share_by_psn {
            rec("ocl_share", "psn", k.to_string(), v.to_string()).map_err(to_err)?;
        }
        for (name, v) in ["small", "medium", "large"].iter().zip(m.size_terciles) {
            rec("relative_ocl", "size_tercile", name.to_string(), fmt_opt(v)).map_err(to_err)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("metrics", e))
}

pub fn write_histogram_csv<W: Write>(h: &Histogram, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let to_err = |e: csv::Error| Error::Data(format!("writing histogram: {e}"));
    wtr.write_record(["psn", "lower", "upper", "count"]).map_err(to_err)?;
    let mut emit = |psn: &str, counts: &[usize]| -> Result<()> {
        for (b, c) in counts.iter().enumerate() {
            wtr.write_record([psn.to_string(), h.edges[b].to_string(), h.edges[b + 1].to_string(), c.to_string()])
                .map_err(to_err)?;
        }
        Ok(())
    };
    emit("all", &h.counts)?;
    for (psn, counts) in &h.by_psn {
        emit(&psn.to_string(), counts)?;
    }
    wtr.flush().map_err(|e| Error::io("histogram", e))
}
