//! Initial ultimate and OCL estimates for newly notified claims.
//!
//! The accident-period mean of settled ultimates is blended with the
//! portfolio mean by a credibility weight `z_i = 1 / pi_i`, after both means
//! are adjusted for claims-mix drift with the payments-per-claim-incurred
//! triangle.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::claims::{build_triangle, Claim, Dataset, Triangle, TriangleKind};
use crate::error::{Error, Result};

/// Volume-weighted link ratios `f_j = sum_i C[i][j+1] / sum_i C[i][j]` over
/// rows having both cells, for `j = 1..T-1`.
pub fn link_ratios(tri: &Triangle) -> Result<Vec<f64>> {
    let t = tri.valuation;
    let mut out = Vec::with_capacity(t.saturating_sub(1) as usize);
    for j in 1..t {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 1..=(t - j) {
            num += tri.get(i, j + 1).expect("cell inside triangle");
            den += tri.get(i, j).expect("cell inside triangle");
        }
        if den == 0.0 {
            return Err(Error::Factor { column: j as usize });
        }
        out.push(num / den);
    }
    Ok(out)
}

/// Cumulative development factor from each accident period's latest
/// observed column to the last column (tail factor 1). Entry `i - 1`
/// belongs to accident period `i`.
pub fn age_to_ultimate(tri: &Triangle) -> Result<Vec<f64>> {
    if tri.valuation < 2 {
        return Err(Error::Data("age-to-ultimate needs at least two development columns".into()));
    }
    let f = link_ratios(tri)?;
    Ok(cumulate(&f, tri.valuation))
}

pub(crate) fn cumulate(f: &[f64], t: u32) -> Vec<f64> {
    (1..=t)
        .map(|i| {
            let from = (t - i + 1) as usize; // latest column, 1-based
            f[from - 1..].iter().product()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApInit {
    pub accident_period: u32,
    pub n_settled: usize,
    pub ul_total: f64,
    pub ul_mean: f64,
    pub pi: f64,
    pub pi_ppci: f64,
    pub z: f64,
    pub adj_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitTables {
    pub valuation: u32,
    pub per_ap: Vec<ApInit>,
    pub n_settled: usize,
    /// Settled-count weighted mean of per-AP means.
    pub ul_mean_overall: f64,
    pub adj_mean_overall: f64,
}

/// Builds the credibility tables from claims settled by `valuation`.
pub fn build_init_tables(train: &Dataset, valuation: u32) -> Result<InitTables> {
    let settled: Vec<&Claim> = train
        .claims
        .iter()
        .filter(|c| c.is_settled_by(valuation) && c.accident_period <= valuation)
        .collect();
    if settled.is_empty() {
        return Err(Error::Init("no settled claims in training data".into()));
    }
    let paid = build_triangle(train, TriangleKind::CumPaid, valuation, true)?;
    let ppci = build_triangle(train, TriangleKind::Ppci, valuation, true)?;
    let (pi, pi_ppci) = if valuation >= 2 {
        (age_to_ultimate(&paid)?, age_to_ultimate(&ppci)?)
    } else {
        (vec![1.0], vec![1.0])
    };

    let n = valuation as usize;
    let mut totals = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for c in &settled {
        let k = (c.accident_period - 1) as usize;
        totals[k] += c.ultimate().unwrap_or(0.0);
        counts[k] += 1;
    }
    let n_settled = settled.len();
    let mut per_ap = Vec::with_capacity(n);
    let mut ul_mean_overall = 0.0;
    let mut adj_total = 0.0;
    for k in 0..n {
        let ul_mean = if counts[k] > 0 { totals[k] / counts[k] as f64 } else { 0.0 };
        let z = if counts[k] > 0 { (1.0 / pi[k]).clamp(0.0, 1.0) } else { 0.0 };
        ul_mean_overall += ul_mean * counts[k] as f64 / n_settled as f64;
        adj_total += pi_ppci[k] * totals[k];
        per_ap.push(ApInit {
            accident_period: k as u32 + 1,
            n_settled: counts[k],
            ul_total: totals[k],
            ul_mean,
            pi: pi[k],
            pi_ppci: pi_ppci[k],
            z,
            adj_mean: pi_ppci[k] * ul_mean,
        });
    }
    let adj_mean_overall = adj_total / n_settled as f64;
    if !(adj_mean_overall.is_finite() && adj_mean_overall > 0.0) {
        return Err(Error::Init(format!(
            "adjusted overall mean is {adj_mean_overall}; settled claims carry no payments"
        )));
    }
    Ok(InitTables {
        valuation,
        per_ap,
        n_settled,
        ul_mean_overall,
        adj_mean_overall,
    })
}

impl InitTables {
    pub fn get(&self, ap: u32) -> Option<&ApInit> {
        self.per_ap.get(ap.checked_sub(1)? as usize)
    }

    /// `(UL_0, OCL_0)` for a claim of accident period `ap` whose cumulative
    /// paid at notification is `paid`. Falls back to `adj_overall / K^2`
    /// whenever the blended ultimate does not exceed the amount paid.
    pub fn initialise(&self, ap: u32, paid: f64, k: f64) -> (f64, f64) {
        let (z, adj) = match self.get(ap) {
            Some(row) => (row.z, row.adj_mean),
            None => (0.0, 0.0),
        };
        let ul0 = z * adj + (1.0 - z) * self.adj_mean_overall;
        let mut ocl0 = ul0 - paid;
        if ocl0 <= 0.0 {
            ocl0 = self.adj_mean_overall / (k * k);
        }
        (ul0, ocl0)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let to_err = |e: csv::Error| Error::Data(format!("writing init tables: {e}"));
        wtr.write_record([
            "accident_period",
            "n_settled",
            "ul_mean",
            "pi",
            "pi_ppci",
            "z",
            "adj_mean",
            "adj_mean_overall",
        ])
        .map_err(to_err)?;
        for r in &self.per_ap {
            wtr.write_record([
                r.accident_period.to_string(),
                r.n_settled.to_string(),
                r.ul_mean.to_string(),
                r.pi.to_string(),
                r.pi_ppci.to_string(),
                r.z.to_string(),
                r.adj_mean.to_string(),
                self.adj_mean_overall.to_string(),
            ])
            .map_err(to_err)?;
        }
        wtr.flush().map_err(|e| Error::io("init tables", e))
    }
}

/// Source of the first OCL estimate for a claim.
pub trait ClaimInitialiser {
    /// Returns `(UL_0, OCL_0)` with `OCL_0 > 0`.
    fn initialise(&self, claim: &Claim, paid_at_notification: f64, k: f64) -> Result<(f64, f64)>;
}

impl ClaimInitialiser for InitTables {
    fn initialise(&self, claim: &Claim, paid: f64, k: f64) -> Result<(f64, f64)> {
        Ok(InitTables::initialise(self, claim.accident_period, paid, k))
    }
}

/// Initialises every claim with its true OCL at notification. Only usable
/// for settled claims; intended for controlled experiments.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleInitialiser;

impl ClaimInitialiser for OracleInitialiser {
    fn initialise(&self, claim: &Claim, paid: f64, _k: f64) -> Result<(f64, f64)> {
        let ult = claim
            .ultimate()
            .ok_or_else(|| Error::Init(format!("claim {} is open; oracle needs the ultimate", claim.claim_no)))?;
        if ult - paid <= 0.0 {
            return Err(Error::Init(format!("claim {} has no outstanding amount", claim.claim_no)));
        }
        Ok((ult, ult - paid))
    }
}

/// A fixed `OCL_0` for every claim.
#[derive(Debug, Clone, Copy)]
pub struct FixedInitialiser(pub f64);

impl ClaimInitialiser for FixedInitialiser {
    fn initialise(&self, _claim: &Claim, paid: f64, _k: f64) -> Result<(f64, f64)> {
        if self.0 <= 0.0 {
            return Err(Error::Init("fixed initial OCL must be positive".into()));
        }
        Ok((self.0 + paid, self.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_triangle() {
        let tri = Triangle::from_rows(
            TriangleKind::CumPaid,
            vec![vec![100.0, 150.0, 165.0], vec![110.0, 176.0], vec![120.0]],
        )
        .unwrap();
        let f = link_ratios(&tri).unwrap();
        assert!((f[0] - 326.0 / 210.0).abs() < 1e-12);
        assert!((f[1] - 1.1).abs() < 1e-12);
        let pi = age_to_ultimate(&tri).unwrap();
        assert_eq!(pi[0], 1.0);
        assert!((pi[1] - 1.1).abs() < 1e-12);
        assert!((pi[2] - 1.707_619_047_619_047_6).abs() < 1e-12);
    }

    #[test]
    fn zero_column_is_an_error() {
        let tri = Triangle::from_rows(TriangleKind::CumPaid, vec![vec![0.0, 5.0], vec![0.0]]).unwrap();
        assert!(matches!(age_to_ultimate(&tri), Err(Error::Factor { column: 1 })));
    }

    fn tables(adj_i: f64, z: f64, overall: f64) -> InitTables {
        InitTables {
            valuation: 1,
            per_ap: vec![ApInit {
                accident_period: 1,
                n_settled: 1,
                ul_total: adj_i,
                ul_mean: adj_i,
                pi: 1.0 / z.max(1e-12),
                pi_ppci: 1.0,
                z,
                adj_mean: adj_i,
            }],
            n_settled: 1,
            ul_mean_overall: overall,
            adj_mean_overall: overall,
        }
    }

    #[test]
    fn credibility_limits() {
        let t = tables(100.0, 1.0, 60.0);
        assert_eq!(t.initialise(1, 0.0, 2.0), (100.0, 100.0));
        let t = tables(100.0, 0.0, 60.0);
        assert_eq!(t.initialise(1, 0.0, 2.0), (60.0, 60.0));
        // Unknown accident period uses the overall mean.
        assert_eq!(t.initialise(7, 10.0, 2.0), (60.0, 50.0));
    }

    #[test]
    fn fallback_when_paid_exceeds_ultimate() {
        let t = tables(100.0, 1.0, 60.0);
        let (ul, ocl) = t.initialise(1, 150.0, 2.0);
        assert_eq!(ul, 100.0);
        assert_eq!(ocl, 15.0);
    }
}
