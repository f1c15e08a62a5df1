//! Aggregate chain-ladder benchmark restricted to reported claims.
//!
//! Paid and count triangles are developed to ultimate, the expected cost of
//! claims still to be reported is removed using an average severity per
//! accident period and a reporting-delay severity curve, and the remainder
//! net of settled ultimates and open-claim payments is the RBNS OCL.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::claims::{build_triangle, Dataset, Triangle, TriangleKind};
use crate::error::{Error, Result};
use crate::init::{cumulate, link_ratios};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClUltimates {
    pub paid_ratios: Vec<f64>,
    pub count_ratios: Vec<f64>,
    pub paid_ult: Vec<f64>,
    pub count_ult: Vec<f64>,
    /// Average ultimate severity per accident period.
    pub mu: Vec<f64>,
}

fn develop(tri: &Triangle) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = tri.valuation;
    if t == 1 {
        return Ok((Vec::new(), vec![tri.latest(1)]));
    }
    let f = link_ratios(tri)?;
    let pi = cumulate(&f, t);
    let ult = (1..=t).map(|i| tri.latest(i) * pi[(i - 1) as usize]).collect();
    Ok((f, ult))
}

pub fn cl_ultimates(paid: &Triangle, counts: &Triangle) -> Result<ClUltimates> {
    if paid.valuation != counts.valuation {
        return Err(Error::Dimension {
            expected: paid.valuation as usize,
            got: counts.valuation as usize,
        });
    }
    let (paid_ratios, paid_ult) = develop(paid)?;
    let (count_ratios, count_ult) = develop(counts)?;
    let mu = paid_ult
        .iter()
        .zip(&count_ult)
        .enumerate()
        .map(|(k, (p, n))| {
            if *n > 0.0 {
                Ok(p / n)
            } else {
                Err(Error::ZeroUltimateCount { ap: k as u32 + 1 })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClUltimates {
        paid_ratios,
        count_ratios,
        paid_ult,
        count_ult,
        mu,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmootherConfig {
    /// Penalty grid, relative to the mean bucket size.
    pub lambdas: Vec<f64>,
    pub monotone: bool,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            lambdas: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            monotone: false,
        }
    }
}

/// Severity multiplier by reporting delay, `s(0) = 1`. Delays beyond the
/// fitted range use the last value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayScaling {
    pub values: Vec<f64>,
    pub lambda: f64,
}

impl DelayScaling {
    pub fn flat() -> Self {
        DelayScaling {
            values: vec![1.0],
            lambda: 0.0,
        }
    }

    pub fn at(&self, d: u32) -> f64 {
        let k = (d as usize).min(self.values.len() - 1);
        self.values[k]
    }
}

/// Fits `s(d)` to `(delay, incurred)` observations with a second-difference
/// penalised smoother on the bucket means, choosing the penalty by
/// leave-one-bucket-out cross-validation.
pub fn fit_delay_scaling(obs: &[(u32, f64)], cfg: &SmootherConfig) -> Result<DelayScaling> {
    if obs.is_empty() {
        return Err(Error::Data("delay scaling needs at least one observation".into()));
    }
    let max_d = obs.iter().map(|o| o.0).max().expect("non-empty") as usize;
    let mut n = vec![0.0; max_d + 1];
    let mut sum = vec![0.0; max_d + 1];
    for (d, v) in obs {
        n[*d as usize] += 1.0;
        sum[*d as usize] += v;
    }
    let mean: Vec<f64> = sum.iter().zip(&n).map(|(s, c)| if *c > 0.0 { s / c } else { 0.0 }).collect();
    let filled: Vec<usize> = (0..=max_d).filter(|d| n[*d] > 0.0).collect();

    if filled.len() == 1 {
        return Ok(DelayScaling {
            values: vec![1.0; max_d + 1],
            lambda: 0.0,
        });
    }
    let scale = n.iter().sum::<f64>() / filled.len() as f64;
    let grid: Vec<f64> = if cfg.lambdas.is_empty() { vec![1.0] } else { cfg.lambdas.clone() };
    let mut best = (f64::INFINITY, grid[0] * scale);
    if filled.len() >= 3 {
        for lam in &grid {
            let lam = lam * scale;
            let mut score = 0.0;
            for &hold in &filled {
                let mut w = n.clone();
                w[hold] = 0.0;
                let f = penalised_fit(&mean, &w, lam)?;
                score += n[hold] * (mean[hold] - f[hold]).powi(2);
            }
            if score < best.0 {
                best = (score, lam);
            }
        }
    }
    let lambda = best.1;
    let mut f = penalised_fit(&mean, &n, lambda)?;
    if cfg.monotone {
        f = pava(&f, &n.iter().map(|c| c.max(1e-9)).collect::<Vec<_>>());
    }
    let top = f.iter().cloned().fold(f64::MIN, f64::max);
    let floor = 1e-9 * top.abs().max(1e-300);
    for v in &mut f {
        *v = v.max(floor);
    }
    let base = f[0];
    Ok(DelayScaling {
        values: f.iter().map(|v| v / base).collect(),
        lambda,
    })
}

/// Solves `(W + lam D'D) f = W y` for the second-difference matrix `D`.
fn penalised_fit(y: &[f64], w: &[f64], lam: f64) -> Result<Vec<f64>> {
    let m = y.len();
    let mut a = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for i in 0..m {
        a[i][i] += w[i];
        b[i] = w[i] * y[i];
    }
    for k in 1..m.saturating_sub(1) {
        let idx = [k - 1, k, k + 1];
        let coef = [1.0, -2.0, 1.0];
        for (r, cr) in idx.iter().zip(coef) {
            for (c, cc) in idx.iter().zip(coef) {
                a[*r][*c] += lam * cr * cc;
            }
        }
    }
    solve(a, b).ok_or_else(|| Error::Numeric("delay smoother system is singular".into()))
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|x, y| a[*x][col].abs().total_cmp(&a[*y][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Weighted pool-adjacent-violators for a non-decreasing fit.
fn pava(y: &[f64], w: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (v, wt) in y.iter().zip(w) {
        blocks.push((*v, *wt, 1));
        while blocks.len() > 1 {
            let (v2, w2, n2) = blocks[blocks.len() - 1];
            let (v1, w1, n1) = blocks[blocks.len() - 2];
            if v1 <= v2 {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().expect("two blocks");
            *last = ((v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, n1 + n2);
        }
    }
    blocks.into_iter().flat_map(|(v, _, n)| std::iter::repeat_n(v, n)).collect()
}

/// Expected cost of claims not yet reported, per accident period:
/// projected incremental counts in each future development column `j`
/// priced at `mu_i * s(j - 1)`.
pub fn ibnr_strip(counts: &Triangle, count_ratios: &[f64], mu: &[f64], s: &DelayScaling) -> Vec<f64> {
    let t = counts.valuation;
    (1..=t)
        .map(|i| {
            let mut n_prev = counts.latest(i);
            let mut ibnr = 0.0;
            for j in (counts.latest_column(i) + 1)..=t {
                let n_j = n_prev * count_ratios[(j - 2) as usize];
                ibnr += (n_j - n_prev) * mu[(i - 1) as usize] * s.at(j - 1);
                n_prev = n_j;
            }
            ibnr
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClRow {
    pub accident_period: u32,
    pub ultimate: f64,
    pub count_ultimate: f64,
    pub count_observed: f64,
    pub mu: f64,
    pub ibnr: f64,
    pub settled_ultimate: f64,
    pub open_paid: f64,
    /// Before clamping at zero.
    pub rbns_ocl_raw: f64,
    pub rbns_ocl: f64,
    /// Projected ultimate count within one claim of the observed count.
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClResult {
    pub valuation: u32,
    pub rows: Vec<ClRow>,
    pub scaling: DelayScaling,
    pub total_rbns_ocl: f64,
    pub clamped: usize,
}

impl ClResult {
    pub fn rbns_by_ap(&self) -> Vec<(u32, f64)> {
        self.rows.iter().map(|r| (r.accident_period, r.rbns_ocl)).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let to_err = |e: csv::Error| Error::Data(format!("writing chain-ladder report: {e}"));
        wtr.write_record(["ap", "ultimate", "count_ultimate", "mu", "ibnr", "rbns_ocl", "stable"])
            .map_err(to_err)?;
        for r in &self.rows {
            wtr.write_record([
                r.accident_period.to_string(),
                r.ultimate.to_string(),
                r.count_ultimate.to_string(),
                r.mu.to_string(),
                r.ibnr.to_string(),
                r.rbns_ocl.to_string(),
                r.stable.to_string(),
            ])
            .map_err(to_err)?;
        }
        wtr.flush().map_err(|e| Error::io("chain-ladder report", e))
    }
}

/// RBNS OCL per accident period from the developed ultimates.
pub fn rbns_ocl(ult: &ClUltimates, ibnr: &[f64], counts: &Triangle, train: &Dataset, cutoff: u32) -> Vec<ClRow> {
    let n = cutoff as usize;
    let mut settled = vec![0.0; n];
    let mut open_paid = vec![0.0; n];
    for c in &train.claims {
        if c.accident_period > cutoff || c.notification_period > cutoff {
            continue;
        }
        let k = (c.accident_period - 1) as usize;
        if c.is_settled_by(cutoff) {
            settled[k] += c.ultimate().unwrap_or(0.0);
        } else {
            open_paid[k] += c.paid_at_calendar(cutoff);
        }
    }
    (0..n)
        .map(|k| {
            let raw = ult.paid_ult[k] - ibnr[k] - settled[k] - open_paid[k];
            let observed = counts.latest(k as u32 + 1);
            ClRow {
                accident_period: k as u32 + 1,
                ultimate: ult.paid_ult[k],
                count_ultimate: ult.count_ult[k],
                count_observed: observed,
                mu: ult.mu[k],
                ibnr: ibnr[k],
                settled_ultimate: settled[k],
                open_paid: open_paid[k],
                rbns_ocl_raw: raw,
                rbns_ocl: raw.max(0.0),
                stable: (ult.count_ult[k] - observed).abs() <= 1.0,
            }
        })
        .collect()
}

/// Full benchmark on data observed up to `cutoff`.
pub fn run_chain_ladder(train: &Dataset, cutoff: u32, cfg: &SmootherConfig) -> Result<ClResult> {
    let paid = build_triangle(train, TriangleKind::CumPaid, cutoff, false)?;
    let counts = build_triangle(train, TriangleKind::CumCount, cutoff, false)?;
    let ult = cl_ultimates(&paid, &counts)?;
    let obs: Vec<(u32, f64)> = train
        .claims
        .iter()
        .filter(|c| c.notification_period <= cutoff)
        .map(|c| {
            let v = if c.is_settled_by(cutoff) {
                c.ultimate().unwrap_or(0.0)
            } else {
                let r = c.record_at_calendar(cutoff).or(c.dev_records.last());
                r.map_or(0.0, |r| r.cum_paid + r.case.unwrap_or(0.0))
            };
            (c.repdel, v)
        })
        .collect();
    let scaling = fit_delay_scaling(&obs, cfg)?;
    let ibnr = ibnr_strip(&counts, &ult.count_ratios, &ult.mu, &scaling);
    let rows = rbns_ocl(&ult, &ibnr, &counts, train, cutoff);
    let clamped = rows.iter().filter(|r| r.rbns_ocl_raw < 0.0).count();
    if clamped > 0 {
        log::warn!("{clamped} accident periods had negative RBNS OCL; clamped to zero");
    }
    Ok(ClResult {
        valuation: cutoff,
        total_rbns_ocl: rows.iter().map(|r| r.rbns_ocl).sum(),
        rows,
        scaling,
        clamped,
    })
}
