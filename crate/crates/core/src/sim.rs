//! Seeded transactional portfolio generator emitting the SPLICE schema.
//!
//! Claim sizes are drawn pre-inflation. Every payment is inflated by the
//! index of the calendar period it falls in, so cumulative paid at
//! settlement equals the inflated ultimate.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::claims::{Dataset, PeriodUnit, Schema, Transaction, TxnType};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_accident_periods: u32,
    pub mean_claims_per_period: f64,
    /// Log-scale mean of the (pre-inflation) claim size.
    pub size_meanlog: f64,
    pub size_sdlog: f64,
    /// Mean notification delay in periods for a median-sized claim.
    pub notification_mean: f64,
    /// Elasticity of the notification delay mean to standardised log size.
    pub notification_size_slope: f64,
    /// Mean settlement delay (from notification) for a median-sized claim.
    pub settlement_base: f64,
    /// Elasticity of the settlement delay mean to standardised log size.
    pub settlement_size_slope: f64,
    /// Gamma shape of the settlement delay.
    pub settlement_shape: f64,
    /// Expected partial payments per period of open duration.
    pub payment_rate: f64,
    pub max_payments: u32,
    /// Relative weight of the final payment vs a partial one.
    pub final_payment_weight: f64,
    /// Case revision intensities per open period.
    pub minor_revision_rate: f64,
    pub major_revision_rate: f64,
    /// Log-scale noise of a fresh case estimate around the true remaining liability.
    pub case_noise_sdlog: f64,
    /// Base inflation per period.
    pub base_inflation: f64,
    /// Superimposed inflation per period.
    pub superimposed_inflation: f64,
    pub structural_break_period: Option<u32>,
    /// Multiplier on settlement delay for claims notified at or after the break.
    pub break_settlement_factor: f64,
    /// Growth of the size/settlement-delay slope from the first to the last
    /// accident period.
    pub size_duration_drift: f64,
    pub period_unit: PeriodUnit,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_accident_periods: 40,
            mean_claims_per_period: 200.0,
            size_meanlog: 10.0,
            size_sdlog: 1.0,
            notification_mean: 0.6,
            notification_size_slope: 0.15,
            settlement_base: 5.0,
            settlement_size_slope: 0.35,
            settlement_shape: 2.0,
            payment_rate: 0.6,
            max_payments: 30,
            final_payment_weight: 2.0,
            minor_revision_rate: 0.3,
            major_revision_rate: 0.08,
            case_noise_sdlog: 0.5,
            base_inflation: 0.0,
            superimposed_inflation: 0.0,
            structural_break_period: None,
            break_settlement_factor: 1.0,
            size_duration_drift: 0.0,
            period_unit: PeriodUnit::Quarter,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Complexity1,
    Complexity5,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "complexity1" => Ok(Preset::Complexity1),
            "complexity5" => Ok(Preset::Complexity5),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

/// Documented defaults for each complexity level.
///
/// `complexity1` has a stationary development pattern and no inflation.
/// `complexity5` adds base and superimposed inflation, faster settlement
/// for claims notified from calendar period 20 onwards, and a size/
/// duration correlation that strengthens for later accident periods.
pub fn preset(name: &str) -> Result<SimConfig> {
    Ok(preset_config(name.parse()?))
}

pub fn preset_config(p: Preset) -> SimConfig {
    match p {
        Preset::Complexity1 => SimConfig::default(),
        Preset::Complexity5 => SimConfig {
            base_inflation: 0.005,
            superimposed_inflation: 0.005,
            structural_break_period: Some(20),
            break_settlement_factor: 0.75,
            size_duration_drift: 0.35,
            ..SimConfig::default()
        },
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.mean_claims_per_period,
            self.size_meanlog,
            self.size_sdlog,
            self.notification_mean,
            self.notification_size_slope,
            self.settlement_base,
            self.settlement_size_slope,
            self.settlement_shape,
            self.payment_rate,
            self.final_payment_weight,
            self.minor_revision_rate,
            self.major_revision_rate,
            self.case_noise_sdlog,
            self.base_inflation,
            self.superimposed_inflation,
            self.break_settlement_factor,
            self.size_duration_drift,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("simulation parameters must be finite".into()));
        }
        let positive = [
            ("size_sdlog", self.size_sdlog),
            ("notification_mean", self.notification_mean),
            ("settlement_base", self.settlement_base),
            ("settlement_shape", self.settlement_shape),
            ("final_payment_weight", self.final_payment_weight),
            ("break_settlement_factor", self.break_settlement_factor),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        let non_negative = [
            ("mean_claims_per_period", self.mean_claims_per_period),
            ("payment_rate", self.payment_rate),
            ("minor_revision_rate", self.minor_revision_rate),
            ("major_revision_rate", self.major_revision_rate),
            ("case_noise_sdlog", self.case_noise_sdlog),
        ];
        for (name, v) in non_negative {
            if v < 0.0 {
                return Err(Error::Config(format!("{name} must be >= 0")));
            }
        }
        if self.base_inflation <= -1.0 || self.superimposed_inflation <= -1.0 {
            return Err(Error::Config("inflation rates must exceed -1".into()));
        }
        if self.n_accident_periods == 0 {
            return Err(Error::Config("n_accident_periods must be >= 1".into()));
        }
        if self.max_payments == 0 {
            return Err(Error::Config("max_payments must be >= 1".into()));
        }
        if let Some(b) = self.structural_break_period {
            if b == 0 || b > self.n_accident_periods {
                return Err(Error::Config(format!(
                    "structural_break_period {b} outside 1..={}",
                    self.n_accident_periods
                )));
            }
        }
        Ok(())
    }

    pub fn inflation(&self) -> InflationPath {
        InflationPath {
            base: self.base_inflation,
            superimposed: self.superimposed_inflation,
        }
    }
}

/// Multiplicative price index per calendar period: period 1 has index 1
/// and each later period compounds base and superimposed inflation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationPath {
    pub base: f64,
    pub superimposed: f64,
}

impl InflationPath {
    pub fn index(&self, period: u32) -> f64 {
        let per = (1.0 + self.base) * (1.0 + self.superimposed);
        per.powi(period.saturating_sub(1) as i32)
    }

    pub fn is_identity(&self) -> bool {
        self.base == 0.0 && self.superimposed == 0.0
    }
}

/// Ground truth for one simulated claim: real (pre-inflation) payment
/// amounts and times, before they are rendered as transactions.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedClaim {
    pub claim_no: u64,
    pub accident_period: u32,
    pub occurrence_time: f64,
    pub notification_time: f64,
    pub settlement_time: f64,
    pub claim_size: f64,
    /// (time, real amount) in time order; the last entry is the final payment.
    pub payments: Vec<(f64, f64)>,
    pub transactions: Vec<Transaction>,
}

impl SimulatedClaim {
    pub fn inflated_ultimate(&self, inflation: &InflationPath) -> f64 {
        self.payments
            .iter()
            .map(|(t, x)| x * inflation.index(crate::claims::period_of(*t)))
            .sum()
    }
}

/// Generates every claim of the portfolio. Claims are numbered in accident
/// period order and each draws from its own generator stream, so results
/// do not depend on evaluation order.
pub fn simulate_claims(cfg: &SimConfig) -> Result<Vec<SimulatedClaim>> {
    cfg.validate()?;
    let mut counts_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut counts = Vec::with_capacity(cfg.n_accident_periods as usize);
    for _ in 0..cfg.n_accident_periods {
        let n = if cfg.mean_claims_per_period == 0.0 {
            0
        } else {
            let pois = Poisson::new(cfg.mean_claims_per_period)
                .map_err(|e| Error::Config(format!("claim frequency: {e}")))?;
            pois.sample(&mut counts_rng) as u64
        };
        counts.push(n);
    }

    let size_dist =
        LogNormal::new(cfg.size_meanlog, cfg.size_sdlog).map_err(|e| Error::Config(format!("claim size: {e}")))?;
    let inflation = cfg.inflation();
    let mut claims = Vec::new();
    let mut claim_no = 0u64;
    for (i, n) in counts.into_iter().enumerate() {
        let ap = i as u32 + 1;
        for _ in 0..n {
            claim_no += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(claim_no);
            claims.push(simulate_one(cfg, &size_dist, &inflation, claim_no, ap, &mut rng)?);
        }
    }
    Ok(claims)
}

fn gamma_with_mean(shape: f64, mean: f64) -> Result<Gamma<f64>> {
    Gamma::new(shape, mean / shape).map_err(|e| Error::Config(format!("gamma({shape}, {mean}): {e}")))
}

fn simulate_one(
    cfg: &SimConfig,
    size_dist: &LogNormal<f64>,
    inflation: &InflationPath,
    claim_no: u64,
    ap: u32,
    rng: &mut ChaCha8Rng,
) -> Result<SimulatedClaim> {
    let occurrence = (ap - 1) as f64 + rng.random::<f64>().max(1e-9);
    let size = size_dist.sample(rng);
    let z = (size.ln() - cfg.size_meanlog) / cfg.size_sdlog;

    let notif_mean = cfg.notification_mean * (cfg.notification_size_slope * z).exp();
    let notification = occurrence + gamma_with_mean(1.5, notif_mean)?.sample(rng);

    let progress = if cfg.n_accident_periods > 1 {
        (ap - 1) as f64 / (cfg.n_accident_periods - 1) as f64
    } else {
        0.0
    };
    let slope = cfg.settlement_size_slope + cfg.size_duration_drift * progress;
    let mut settle_mean = cfg.settlement_base * (slope * z).exp();
    if let Some(b) = cfg.structural_break_period {
        if crate::claims::period_of(notification) >= b {
            settle_mean *= cfg.break_settlement_factor;
        }
    }
    let duration = gamma_with_mean(cfg.settlement_shape, settle_mean)?.sample(rng).max(0.05);
    let settlement = notification + duration;

    let n_partial = if cfg.payment_rate > 0.0 {
        let pois = Poisson::new(cfg.payment_rate * duration).map_err(|e| Error::Config(e.to_string()))?;
        (pois.sample(rng) as u32).min(cfg.max_payments - 1)
    } else {
        0
    };
    let mut pay_times: Vec<f64> = (0..n_partial)
        .map(|_| notification + rng.random::<f64>() * duration)
        .collect();
    pay_times.sort_by(f64::total_cmp);
    pay_times.push(settlement);

    let unit = Gamma::new(2.0, 1.0).expect("valid gamma");
    let mut weights: Vec<f64> = (0..n_partial).map(|_| unit.sample(rng)).collect();
    weights.push(unit.sample(rng) * cfg.final_payment_weight);
    let wsum: f64 = weights.iter().sum();
    let mut payments: Vec<(f64, f64)> = pay_times
        .iter()
        .zip(&weights)
        .map(|(t, w)| (*t, size * w / wsum))
        .collect();
    // Exact conservation of the real amount.
    let partial: f64 = payments[..payments.len() - 1].iter().map(|p| p.1).sum();
    payments.last_mut().expect("final payment").1 = size - partial;

    let transactions = render_transactions(cfg, inflation, claim_no, ap, size, notification, &payments, rng);
    Ok(SimulatedClaim {
        claim_no,
        accident_period: ap,
        occurrence_time: occurrence,
        notification_time: notification,
        settlement_time: settlement,
        claim_size: size,
        payments,
        transactions,
    })
}

#[allow(clippy::too_many_arguments)]
fn render_transactions(
    cfg: &SimConfig,
    inflation: &InflationPath,
    claim_no: u64,
    ap: u32,
    size: f64,
    notification: f64,
    payments: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
) -> Vec<Transaction> {
    use crate::claims::period_of;

    let inflated: Vec<f64> = payments
        .iter()
        .map(|(t, x)| x * inflation.index(period_of(*t)))
        .collect();
    let ultimate: f64 = inflated.iter().sum();
    let settlement = payments.last().expect("final payment").0;
    let duration = settlement - notification;

    // Revision events between notification and settlement.
    let mut revisions: Vec<(f64, bool)> = Vec::new();
    for (rate, major) in [(cfg.minor_revision_rate, false), (cfg.major_revision_rate, true)] {
        if rate > 0.0 {
            let n = Poisson::new(rate * duration).map(|p| p.sample(rng) as usize).unwrap_or(0);
            for _ in 0..n.min(20) {
                revisions.push((notification + rng.random::<f64>() * duration, major));
            }
        }
    }
    revisions.sort_by(|a, b| a.0.total_cmp(&b.0));

    let estimate = |remaining: f64, frac_left: f64, rng: &mut ChaCha8Rng| -> f64 {
        let eps: f64 = rng.sample(StandardNormal);
        remaining * (cfg.case_noise_sdlog * frac_left.sqrt() * eps).exp()
    };

    let mut out = Vec::with_capacity(payments.len() + revisions.len() + 1);
    let mut cumpaid = 0.0_f64;
    let frac0 = 1.0;
    let mut case = estimate(ultimate, frac0, rng).max(1e-6 * ultimate);
    out.push(Transaction {
        claim_no,
        txn_time: notification,
        txn_type: TxnType::Ma,
        incurred: Some(case),
        case_ocl: Some(case),
        cumpaid: 0.0,
        accident_period: ap,
        claim_size: size,
    });

    let mut r = 0;
    let last = payments.len() - 1;
    for (k, ((t, _), amount)) in payments.iter().zip(&inflated).enumerate() {
        while r < revisions.len() && revisions[r].0 < *t {
            let (rt, major) = revisions[r];
            let remaining = ultimate - cumpaid;
            let frac_left = ((settlement - rt) / duration.max(1e-9)).clamp(0.0, 1.0);
            case = estimate(remaining, frac_left, rng).max(1e-3 * remaining);
            out.push(Transaction {
                claim_no,
                txn_time: rt,
                txn_type: if major { TxnType::Ma } else { TxnType::Mi },
                incurred: Some(cumpaid + case),
                case_ocl: Some(case),
                cumpaid,
                accident_period: ap,
                claim_size: size,
            });
            r += 1;
        }
        if k == last {
            cumpaid = ultimate;
            out.push(Transaction {
                claim_no,
                txn_time: *t,
                txn_type: TxnType::P,
                incurred: Some(ultimate),
                case_ocl: Some(0.0),
                cumpaid,
                accident_period: ap,
                claim_size: size,
            });
        } else {
            cumpaid += amount;
            let remaining = ultimate - cumpaid;
            let u: f64 = rng.random();
            let ty = if u < 0.15 {
                TxnType::PMa
            } else if u < 0.45 {
                TxnType::PMi
            } else {
                TxnType::P
            };
            if ty == TxnType::P {
                case = (case - amount).max(0.05 * remaining);
            } else {
                let frac_left = ((settlement - t) / duration.max(1e-9)).clamp(0.0, 1.0);
                case = estimate(remaining, frac_left, rng).max(1e-3 * remaining);
            }
            out.push(Transaction {
                claim_no,
                txn_time: *t,
                txn_type: ty,
                incurred: Some(cumpaid + case),
                case_ocl: Some(case),
                cumpaid,
                accident_period: ap,
                claim_size: size,
            });
        }
    }
    out
}

/// Simulates a full portfolio (every claim followed to settlement).
pub fn simulate_portfolio(cfg: &SimConfig) -> Result<Dataset> {
    let claims = simulate_claims(cfg)?;
    let txns = claims.into_iter().flat_map(|c| c.transactions).collect();
    Dataset::from_transactions(txns, Schema::Splice, cfg.period_unit, None)
}

/// Portfolio whose outstanding liability never moves before settlement:
/// each claim is notified mid-period with an exact case estimate and paid
/// in one amount at settlement, `1..=max_duration` periods later.
pub fn single_payment_portfolio(
    n_accident_periods: u32,
    claims_per_period: usize,
    max_duration: u32,
    seed: u64,
) -> Result<Dataset> {
    if max_duration == 0 || n_accident_periods == 0 || claims_per_period == 0 {
        return Err(Error::Config("portfolio dimensions must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size_dist = LogNormal::new(9.0, 0.8).map_err(|e| Error::Config(e.to_string()))?;
    let mut txns = Vec::new();
    let mut claim_no = 0;
    for ap in 1..=n_accident_periods {
        for _ in 0..claims_per_period {
            claim_no += 1;
            let size: f64 = size_dist.sample(&mut rng);
            let notified = f64::from(ap) - 1.0 + rng.random_range(0.05..0.95);
            let duration = rng.random_range(1..=max_duration);
            let base = Transaction {
                claim_no,
                txn_time: notified,
                txn_type: TxnType::Ma,
                incurred: Some(size),
                case_ocl: Some(size),
                cumpaid: 0.0,
                accident_period: ap,
                claim_size: size,
            };
            txns.push(Transaction {
                txn_time: notified + f64::from(duration),
                txn_type: TxnType::P,
                case_ocl: Some(0.0),
                cumpaid: size,
                ..base.clone()
            });
            txns.push(base);
        }
    }
    Dataset::from_transactions(txns, Schema::Splice, PeriodUnit::Quarter, None)
}
