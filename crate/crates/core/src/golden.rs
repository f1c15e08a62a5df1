//! Replay of the shipped single-claim worked example.
//!
//! The fixture directory holds the claim's transactions and a table of
//! expected per-period quantities. The recorded prediction path is
//! converted to actions, replayed through the environment, and every
//! reward component is compared with the table.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::claims::{load_transactions, PeriodUnit, Schema};
use crate::env::{rollout_calendar, EnvConfig, ScriptedPolicy, StateProfile};
use crate::error::{Error, Result};
use crate::init::FixedInitialiser;

pub const TRANSACTIONS_FILE: &str = "worked_example_transactions.csv";
pub const EXPECTED_FILE: &str = "worked_example_expected.csv";

/// Initial OCL of the worked example.
pub const INITIAL_OCL: f64 = 499_175.5;

/// Smoothing ramp length under which the example's smoothing column is
/// reproduced.
pub const M_WARMUP: u32 = 10;

/// Unweighted accuracy reward of the example (`C = 5`, `gamma = 0.99`),
/// from an independent summation over the table.
pub const UNWEIGHTED_R_ACC: f64 = 2.889_968_963_067_661_3;

pub fn default_fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct ExpectedRow {
    dp: u32,
    prev_ocl: f64,
    txn_types: String,
    cum_paid: f64,
    n_pay: u32,
    pred_ocl: f64,
    true_ocl: f64,
    r_stab: f64,
    r_smooth: f64,
    action: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub dp: Option<u32>,
    pub component: String,
    pub expected: f64,
    pub actual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = self.dp.map_or_else(|| "claim".to_string(), |d| format!("DP {d}"));
        write!(
            f,
            "{} {at} {}: expected {:.6}, got {:.6} (tol {:e})",
            if self.passed { "ok  " } else { "FAIL" },
            self.component,
            self.expected,
            self.actual,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn check(dp: Option<u32>, component: &str, expected: f64, actual: f64, tolerance: f64) -> Check {
    Check {
        dp,
        component: component.to_string(),
        expected,
        actual,
        tolerance,
        passed: (expected - actual).abs() <= tolerance,
    }
}

fn exact(dp: u32, component: &str, expected: f64, actual: f64) -> Check {
    Check {
        dp: Some(dp),
        component: component.to_string(),
        expected,
        actual,
        tolerance: 0.0,
        passed: expected == actual,
    }
}

/// The environment configuration under which the fixture is replayed.
pub fn fixture_env() -> EnvConfig {
    EnvConfig {
        k: 2.0,
        gamma: 0.99,
        c: 5.0,
        m_warmup: M_WARMUP,
        n_past: 5,
        alpha_w: 0.0,
        s: 1.0,
        profile: StateProfile::SpliceFull,
    }
}

fn read_expected(path: &Path) -> Result<Vec<ExpectedRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    rdr.deserialize()
        .enumerate()
        .map(|(k, r)| {
            r.map_err(|e| Error::Parse {
                row: k + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Replays the worked example found in `dir`.
pub fn verify_worked_example(dir: &Path) -> Result<VerifyReport> {
    let ds = load_transactions(&dir.join(TRANSACTIONS_FILE), Schema::Splice, PeriodUnit::Quarter)?;
    let expected = read_expected(&dir.join(EXPECTED_FILE))?;
    let claim = ds
        .claims
        .first()
        .ok_or_else(|| Error::Data("fixture holds no claim".into()))?;
    let mut checks = vec![
        exact(0, "accident_period", 34.0, claim.accident_period as f64),
        exact(0, "repdel", 1.0, claim.repdel as f64),
    ];
    for c in checks.iter_mut() {
        c.dp = None;
    }

    // Prediction path taken from the table, as actions.
    let mut script = ScriptedPolicy::default();
    let mut prev = INITIAL_OCL;
    for (k, row) in expected.iter().enumerate() {
        script.actions.insert((claim.claim_no, k as u32 + 1), (row.pred_ocl / prev).ln());
        prev = row.pred_ocl;
    }
    let env = fixture_env();
    let out = rollout_calendar(&ds, &mut script, &FixedInitialiser(INITIAL_OCL), &env, false)?;
    if out.transitions.len() != expected.len() {
        return Err(Error::Invariant(format!(
            "replay produced {} transitions for {} table rows",
            out.transitions.len(),
            expected.len()
        )));
    }

    for (row, t) in expected.iter().zip(&out.transitions) {
        let dp = Some(row.dp);
        let rec = &claim.dev_records[(t.tau - 1) as usize];
        checks.push(exact(row.dp, "dev_period", row.dp as f64, t.dev_period as f64));
        checks.push(exact(row.dp, "n_pay", row.n_pay as f64, rec.n_pay as f64));
        checks.push(check(dp, "cum_paid", row.cum_paid, rec.cum_paid, 1e-6));
        checks.push(check(dp, "true_ocl", row.true_ocl, rec.true_ocl.unwrap_or(f64::NAN), 0.1 + 1e-6));
        checks.push(check(dp, "prev_ocl", row.prev_ocl, t.state[2], 0.1 + 1e-6));
        checks.push(check(dp, "action", row.action, t.action, 1e-4));
        checks.push(check(dp, "r_stab", row.r_stab, t.breakdown.r_stab, 1e-3));
        checks.push(check(dp, "r_smooth", row.r_smooth, t.breakdown.r_smooth, 1e-4));
        let payment = row.txn_types.split('|').any(|s| matches!(s, "P" | "PMi" | "PMa"));
        let table_gated = row.r_stab == 0.0 && row.r_smooth == 0.0;
        checks.push(exact(row.dp, "payment_flag", payment as u8 as f64, rec.txn_types.has_payment() as u8 as f64));
        checks.push(exact(row.dp, "gate_table_agrees", table_gated as u8 as f64, payment as u8 as f64));
        if payment {
            checks.push(exact(row.dp, "r_stab_gated", 0.0, t.breakdown.r_stab));
            checks.push(exact(row.dp, "r_smooth_gated", 0.0, t.breakdown.r_smooth));
        }
    }
    let last = out.transitions.last().expect("non-empty");
    checks.push(exact(expected.last().map_or(0, |r| r.dp), "terminal", 1.0, last.done as u8 as f64));
    checks.push(check(None, "r_acc_unweighted", UNWEIGHTED_R_ACC, last.breakdown.r_acc, 1e-6));
    let by_dp: HashMap<u32, f64> = out.transitions.iter().map(|t| (t.dev_period, t.action)).collect();
    checks.push(check(Some(13), "final_action", -0.0003, by_dp.get(&13).copied().unwrap_or(f64::NAN), 1e-4));
    Ok(VerifyReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_replays() {
        let report = verify_worked_example(&default_fixture_dir()).unwrap();
        for c in report.failures() {
            eprintln!("{c}");
        }
        assert!(report.passed());
    }

    #[test]
    fn missing_fixture_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(verify_worked_example(dir.path()), Err(Error::Io { .. })));
    }
}
