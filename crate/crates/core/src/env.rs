//! The claim-level decision process.
//!
//! Each open claim is an episode indexed by periods since notification
//! `tau = 1..T-1`, where `T` is the settlement period counted the same way.
//! At every step the agent scales its previous OCL estimate by `exp(a)`,
//! `|a| <= ln K`. Rewards combine a terminal accuracy score, a stability
//! shaping term on implied ultimates and a smoothing penalty on the action.

use std::collections::HashMap;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::claims::{Claim, Dataset, DevelopmentRecord, PeriodUnit};
use crate::error::{Error, Result};
use crate::init::ClaimInitialiser;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateProfile {
    Minimal,
    Cas,
    SpliceFull,
}

impl FromStr for StateProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "minimal" => Ok(StateProfile::Minimal),
            "cas" => Ok(StateProfile::Cas),
            "splice_full" | "splice-full" | "splice" => Ok(StateProfile::SpliceFull),
            other => Err(Error::Config(format!("unknown state profile `{other}`"))),
        }
    }
}

/// How a feature is transformed before standardisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Plain,
    Currency,
}

impl StateProfile {
    pub fn feature_names(self, n_past: usize) -> Vec<String> {
        let mut names: Vec<String> = ["ap", "dp", "prev_ocl", "paid"].iter().map(|s| s.to_string()).collect();
        if self != StateProfile::Minimal {
            names.push("repdel".into());
            names.extend((1..=n_past).map(|k| format!("past_pred_{k}")));
        }
        if self == StateProfile::SpliceFull {
            names.extend(["is_mi", "is_ma", "is_p", "is_pmi", "is_pma", "n_pay", "aq", "dq", "case"].map(String::from));
        }
        names
    }

    pub fn feature_kinds(self, n_past: usize) -> Vec<FeatureKind> {
        use FeatureKind::*;
        let mut kinds = vec![Plain, Plain, Currency, Currency];
        if self != StateProfile::Minimal {
            kinds.push(Plain);
            kinds.extend(std::iter::repeat_n(Currency, n_past));
        }
        if self == StateProfile::SpliceFull {
            kinds.extend([Plain; 8]);
            kinds.push(Currency);
        }
        kinds
    }

    pub fn dim(self, n_past: usize) -> usize {
        match self {
            StateProfile::Minimal => 4,
            StateProfile::Cas => 5 + n_past,
            StateProfile::SpliceFull => 14 + n_past,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Per-step action bound factor.
    pub k: f64,
    pub gamma: f64,
    /// Accuracy reward scale.
    pub c: f64,
    /// Length of the smoothing ramp.
    pub m_warmup: u32,
    pub n_past: usize,
    /// Importance-weight exponent.
    pub alpha_w: f64,
    /// Importance-weight scale; usually the mean training OCL.
    pub s: f64,
    pub profile: StateProfile,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            k: 2.0,
            gamma: 0.99,
            c: 5.0,
            m_warmup: 10,
            n_past: 5,
            alpha_w: 0.0,
            s: 1.0,
            profile: StateProfile::SpliceFull,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 1.0 && self.k.is_finite()) {
            return Err(Error::Config(format!("K must be > 1, got {}", self.k)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config("C must be > 0".into()));
        }
        if self.m_warmup == 0 {
            return Err(Error::Config("M_warmup must be >= 1".into()));
        }
        if !(self.alpha_w >= 0.0 && self.alpha_w.is_finite()) {
            return Err(Error::Config("alpha_w must be >= 0".into()));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::Config("weight scale s must be > 0".into()));
        }
        Ok(())
    }

    pub fn ln_k(&self) -> f64 {
        self.k.ln()
    }

    pub fn state_dim(&self) -> usize {
        self.profile.dim(self.n_past)
    }
}

/// `prev * exp(clip(a, -ln K, ln K))`.
pub fn apply_action(prev_ocl: f64, a: f64, k: f64) -> Result<f64> {
    if !(prev_ocl > 0.0) {
        return Err(Error::Invariant(format!("previous OCL must be positive, got {prev_ocl}")));
    }
    let l = k.ln();
    Ok(prev_ocl * a.clamp(-l, l).exp())
}

/// Bounded symmetric agreement score `1 - |yhat - y| / ((|y| + |yhat|) / 2)`,
/// with `h(0, 0) = 1`.
pub fn smape_h(y: f64, yhat: f64) -> f64 {
    let denom = (y.abs() + yhat.abs()) / 2.0;
    if denom == 0.0 {
        return 1.0;
    }
    1.0 - (yhat - y).abs() / denom
}

/// Terminal accuracy reward over a whole episode. The normaliser uses the
/// discount weights only.
pub fn reward_accuracy(ocl: &[f64], pred: &[f64], gamma: f64, c: f64, weights: &[f64]) -> Result<f64> {
    if ocl.is_empty() {
        return Err(Error::Invariant("accuracy reward needs a non-empty path".into()));
    }
    if pred.len() != ocl.len() {
        return Err(Error::Dimension {
            expected: ocl.len(),
            got: pred.len(),
        });
    }
    if weights.len() != ocl.len() {
        return Err(Error::Dimension {
            expected: ocl.len(),
            got: weights.len(),
        });
    }
    let (mut num, mut den, mut disc) = (0.0, 0.0, 1.0);
    for ((y, yhat), w) in ocl.iter().zip(pred).zip(weights) {
        num += w * disc * smape_h(*y, *yhat);
        den += disc;
        disc *= gamma;
    }
    Ok(c * num / den)
}

/// Stability shaping at step `tau` of an episode of length `t_final`.
/// `ul` holds implied ultimates `UL_0..=UL_tau`; `a1` is the first action.
pub fn reward_stability(tau: u32, ul: &[f64], a1: f64, payment: bool, gamma: f64, k: f64, t_final: u32) -> Result<f64> {
    if tau == 0 || tau + 1 > t_final {
        return Err(Error::Invariant(format!("tau {tau} outside 1..={}", t_final.saturating_sub(1))));
    }
    if ul.len() < tau as usize + 1 {
        return Err(Error::Dimension {
            expected: tau as usize + 1,
            got: ul.len(),
        });
    }
    if payment {
        return Ok(0.0);
    }
    let t = tau as usize;
    if tau == 1 {
        let x = a1.abs() / k.ln();
        return Ok(-x * x);
    }
    let prev = smape_h(ul[t - 1], ul[t - 2]);
    if tau + 1 == t_final {
        Ok(-prev)
    } else {
        Ok(gamma * smape_h(ul[t], ul[t - 1]) - prev)
    }
}

/// Action-size penalty ramped in over the first `m_warmup` predictions.
/// `m` counts predictions made before this one.
pub fn reward_smoothing(a: f64, m: u32, m_warmup: u32, k: f64, payment: bool) -> f64 {
    if payment {
        return 0.0;
    }
    let ramp = ((m + 1) as f64 / m_warmup as f64).min(1.0);
    let x = a.abs() / k.ln();
    -ramp * x * x
}

/// `(OCL / s)^alpha`, zero for a non-positive OCL.
pub fn weight_settled(ocl: f64, alpha: f64, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::Config(format!("weight scale must be > 0, got {s}")));
    }
    if ocl <= 0.0 {
        return Ok(0.0);
    }
    Ok((alpha * (ocl / s).ln()).exp())
}

/// Open-claim weight built from the lower bound `max(P_curr, UL_0) - P_tau`
/// on the true OCL.
pub fn weight_open(ul0: f64, paid_tau: f64, paid_curr: f64, alpha: f64, s: f64) -> Result<f64> {
    weight_settled(paid_curr.max(ul0) - paid_tau, alpha, s)
}

/// Importance weight of `claim` at step `tau` (1-based record index).
pub fn ocl_importance_weight(
    claim: &Claim,
    tau: u32,
    alpha: f64,
    s: f64,
    ul0: f64,
    paid_curr: f64,
    settled_in_train: bool,
) -> Result<f64> {
    let rec = claim
        .dev_records
        .get(tau.checked_sub(1).ok_or_else(|| Error::Invariant("tau must be >= 1".into()))? as usize)
        .ok_or_else(|| Error::Invariant(format!("claim {} has no step {tau}", claim.claim_no)))?;
    match (settled_in_train, rec.true_ocl) {
        (true, Some(ocl)) => weight_settled(ocl, alpha, s),
        _ => weight_open(ul0, rec.cum_paid, paid_curr, alpha, s),
    }
}

/// One observation handed to the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub claim_no: u64,
    pub tau: u32,
    pub calendar_period: u32,
    pub values: Vec<f64>,
}

/// Builds the raw features for `rec` given the OCL history `preds`
/// (`OCL_0..OCL_{tau-1}`).
pub fn build_state(
    claim: &Claim,
    rec: &DevelopmentRecord,
    preds: &[f64],
    cfg: &EnvConfig,
    unit: PeriodUnit,
) -> StateVector {
    let mut v = Vec::with_capacity(cfg.state_dim());
    let prev = preds.last().copied().unwrap_or(0.0);
    v.extend([claim.accident_period as f64, rec.dev_period as f64, prev, rec.cum_paid]);
    if cfg.profile != StateProfile::Minimal {
        v.push(claim.repdel as f64);
        let n = cfg.n_past;
        let have = preds.len().min(n);
        v.extend(std::iter::repeat_n(0.0, n - have));
        v.extend_from_slice(&preds[preds.len() - have..]);
    }
    if cfg.profile == StateProfile::SpliceFull {
        v.extend(rec.txn_types.one_hot());
        v.push(rec.n_pay as f64);
        let (aq, dq) = match unit {
            PeriodUnit::Quarter => ((claim.accident_period - 1) % 4 + 1, (rec.dev_period - 1) % 4 + 1),
            PeriodUnit::Year => (1, 1),
        };
        v.extend([aq as f64, dq as f64, rec.case.unwrap_or(0.0)]);
    }
    StateVector {
        claim_no: claim.claim_no,
        tau: rec.calendar_period + 1 - claim.notification_period,
        calendar_period: rec.calendar_period,
        values: v,
    }
}

/// Chooses actions. Implementations should return values within
/// `[-ln K, ln K]`; the environment clips regardless.
pub trait Policy {
    fn act(&mut self, state: &StateVector, explore: bool) -> Result<f64>;
}

impl<P: Policy + ?Sized> Policy for &mut P {
    fn act(&mut self, state: &StateVector, explore: bool) -> Result<f64> {
        (**self).act(state, explore)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&mut self, _: &StateVector, _: bool) -> Result<f64> {
        Ok(0.0)
    }
}

/// Replays recorded actions keyed by `(claim_no, tau)`; zero otherwise.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    pub actions: HashMap<(u64, u32), f64>,
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, s: &StateVector, _: bool) -> Result<f64> {
        Ok(self.actions.get(&(s.claim_no, s.tau)).copied().unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_stab: f64,
    pub r_smooth: f64,
    pub gate_stab: f64,
    pub gate_smooth: f64,
    pub w: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.r_acc + self.r_stab + self.r_smooth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub claim_no: u64,
    pub tau: u32,
    pub accident_period: u32,
    pub dev_period: u32,
    pub calendar_period: u32,
    pub state: Vec<f64>,
    pub action: f64,
    pub reward: f64,
    /// `None` for terminal transitions.
    pub next_state: Option<Vec<f64>>,
    pub done: bool,
    pub breakdown: RewardBreakdown,
    pub pred_ocl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub claim_no: u64,
    pub calendar_period: u32,
    pub tau: u32,
    pub accident_period: u32,
    pub dev_period: u32,
    pub pred_ocl: f64,
    pub true_ocl: Option<f64>,
}

#[derive(Debug, Clone)]
struct Pending {
    tau: u32,
    calendar_period: u32,
    dev_period: u32,
    state: Vec<f64>,
    action: f64,
    pred: f64,
    payment: bool,
}

#[derive(Debug, Clone, Default)]
struct Track {
    started: bool,
    skipped: bool,
    ul0: f64,
    /// `OCL_0..OCL_tau`
    preds: Vec<f64>,
    /// `UL_0..UL_tau`
    ul: Vec<f64>,
    first_action: f64,
    pending: Option<Pending>,
}

/// Advances every claim of a dataset one calendar period at a time.
///
/// A transition is emitted once the following period of the same claim is
/// observed; the step before settlement becomes the terminal transition
/// carrying the accuracy reward. Transitions still pending at the horizon
/// are discarded.
pub struct CalendarRollout<'a> {
    dataset: &'a Dataset,
    init: &'a dyn ClaimInitialiser,
    cfg: EnvConfig,
    horizon: u32,
    next_period: u32,
    tracks: Vec<Track>,
    predictions: Vec<Prediction>,
    skipped: usize,
}

impl<'a> CalendarRollout<'a> {
    pub fn new(dataset: &'a Dataset, init: &'a dyn ClaimInitialiser, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let first = dataset.claims.iter().map(|c| c.notification_period).min().unwrap_or(1);
        Ok(CalendarRollout {
            dataset,
            init,
            cfg,
            horizon: dataset.max_calendar_period,
            next_period: first,
            tracks: vec![Track::default(); dataset.claims.len()],
            predictions: Vec::new(),
            skipped: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn is_done(&self) -> bool {
        self.next_period > self.horizon
    }

    /// Calendar period the next call to [`step`](Self::step) will process.
    pub fn current_period(&self) -> u32 {
        self.next_period
    }

    /// Claims that settle in their notification period and so never receive
    /// a prediction.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn predictions(&self) -> &[Prediction] {
        &self.predictions
    }

    pub fn into_predictions(self) -> Vec<Prediction> {
        self.predictions
    }

    /// Processes one calendar period and returns the transitions finalised
    /// in it, in claim order.
    pub fn step(&mut self, policy: &mut dyn Policy, explore: bool) -> Result<Vec<Transition>> {
        if self.is_done() {
            return Ok(Vec::new());
        }
        let t = self.next_period;
        self.next_period += 1;
        let mut out = Vec::new();
        for idx in 0..self.dataset.claims.len() {
            let claim = &self.dataset.claims[idx];
            let Some(rec) = claim.record_at_calendar(t) else {
                continue;
            };
            let settles_now = claim.settlement_period == Some(t);
            let track = &mut self.tracks[idx];
            if track.skipped {
                continue;
            }
            if !track.started {
                if settles_now {
                    track.skipped = true;
                    self.skipped += 1;
                    continue;
                }
                let (ul0, ocl0) = self.init.initialise(claim, rec.cum_paid, self.cfg.k)?;
                if !(ocl0 > 0.0 && ocl0.is_finite()) {
                    return Err(Error::Invariant(format!("claim {}: initial OCL {ocl0}", claim.claim_no)));
                }
                track.started = true;
                track.ul0 = ul0;
                track.preds.push(ocl0);
                track.ul.push(ocl0 + rec.cum_paid);
            }

            let state = (!settles_now).then(|| build_state(claim, rec, &track.preds, &self.cfg, self.dataset.period_unit));

            if let Some(p) = track.pending.take() {
                out.push(finalise(claim, track, p, state.as_ref(), settles_now, rec.cum_paid, &self.cfg)?);
            }

            if let Some(state) = state {
                let l = self.cfg.ln_k();
                let raw = policy.act(&state, explore)?;
                if !raw.is_finite() {
                    return Err(Error::Numeric(format!("policy returned {raw} for claim {}", claim.claim_no)));
                }
                let a = raw.clamp(-l, l);
                let prev = *track.preds.last().expect("initialised");
                let pred = apply_action(prev, a, self.cfg.k)?;
                if state.tau == 1 {
                    track.first_action = a;
                }
                track.preds.push(pred);
                track.ul.push(pred + rec.cum_paid);
                self.predictions.push(Prediction {
                    claim_no: claim.claim_no,
                    calendar_period: t,
                    tau: state.tau,
                    accident_period: claim.accident_period,
                    dev_period: rec.dev_period,
                    pred_ocl: pred,
                    true_ocl: rec.true_ocl,
                });
                track.pending = Some(Pending {
                    tau: state.tau,
                    calendar_period: t,
                    dev_period: rec.dev_period,
                    state: state.values,
                    action: a,
                    pred,
                    payment: rec.txn_types.has_payment(),
                });
            }
        }
        Ok(out)
    }

    /// Runs to the horizon, collecting every transition.
    pub fn run(&mut self, policy: &mut dyn Policy, explore: bool) -> Result<Vec<Transition>> {
        let mut all = Vec::new();
        while !self.is_done() {
            all.extend(self.step(policy, explore)?);
        }
        Ok(all)
    }
}

fn finalise(
    claim: &Claim,
    track: &Track,
    p: Pending,
    next: Option<&StateVector>,
    terminal: bool,
    paid_curr: f64,
    cfg: &EnvConfig,
) -> Result<Transition> {
    let tau = p.tau;
    let t_final = if terminal { tau + 1 } else { tau + 2 };
    let ul = &track.ul[..=tau as usize];
    let r_stab = reward_stability(tau, ul, track.first_action, p.payment, cfg.gamma, cfg.k, t_final)?;
    let r_smooth = reward_smoothing(p.action, tau - 1, cfg.m_warmup, cfg.k, p.payment);
    let gate = if p.payment { 0.0 } else { 1.0 };
    let settled = claim.is_settled();
    let w = ocl_importance_weight(claim, tau, cfg.alpha_w, cfg.s, track.ul0, paid_curr, settled)?;
    let r_acc = if terminal {
        let n = tau as usize;
        let ocl: Vec<f64> = claim.dev_records[..n].iter().map(|r| r.true_ocl.unwrap_or(0.0)).collect();
        let weights = ocl
            .iter()
            .map(|o| weight_settled(*o, cfg.alpha_w, cfg.s))
            .collect::<Result<Vec<_>>>()?;
        reward_accuracy(&ocl, &track.preds[1..=n], cfg.gamma, cfg.c, &weights)?
    } else {
        0.0
    };
    let breakdown = RewardBreakdown {
        r_acc,
        r_stab,
        r_smooth,
        gate_stab: gate,
        gate_smooth: gate,
        w,
    };
    let reward = breakdown.total();
    if !reward.is_finite() {
        return Err(Error::Numeric(format!("reward {reward} for claim {} at tau {tau}", claim.claim_no)));
    }
    Ok(Transition {
        claim_no: claim.claim_no,
        tau,
        accident_period: claim.accident_period,
        dev_period: p.dev_period,
        calendar_period: p.calendar_period,
        state: p.state,
        action: p.action,
        reward,
        next_state: if terminal { None } else { next.map(|s| s.values.clone()) },
        done: terminal,
        breakdown,
        pred_ocl: p.pred,
    })
}

/// Convenience wrapper running a full rollout.
pub fn rollout_calendar(
    dataset: &Dataset,
    policy: &mut dyn Policy,
    init: &dyn ClaimInitialiser,
    cfg: &EnvConfig,
    explore: bool,
) -> Result<RolloutOutput> {
    let mut r = CalendarRollout::new(dataset, init, cfg.clone())?;
    let transitions = r.run(policy, explore)?;
    let skipped = r.skipped();
    Ok(RolloutOutput {
        transitions,
        predictions: r.into_predictions(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutput {
    pub transitions: Vec<Transition>,
    pub predictions: Vec<Prediction>,
    pub skipped: usize,
}

pub fn write_transition_log<W: Write>(transitions: &[Transition], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let to_err = |e: csv::Error| Error::Data(format!("writing transition log: {e}"));
    wtr.write_record([
        "claim_no", "tau", "ap", "dp", "action", "exp_action", "r_acc", "r_stab", "r_smooth", "w_tau", "ocl_pred",
    ])
    .map_err(to_err)?;
    for t in transitions {
        wtr.write_record([
            t.claim_no.to_string(),
            t.tau.to_string(),
            t.accident_period.to_string(),
            t.dev_period.to_string(),
            t.action.to_string(),
            t.action.exp().to_string(),
            t.breakdown.r_acc.to_string(),
            t.breakdown.r_stab.to_string(),
            t.breakdown.r_smooth.to_string(),
            t.breakdown.w.to_string(),
            t.pred_ocl.to_string(),
        ])
        .map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::io("transition log", e))
}

/// `(tau, action)` pairs read back from a transition log.
pub fn read_transition_actions<R: std::io::Read>(r: R) -> Result<Vec<(u32, f64)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers().map_err(|e| Error::Parse { row: 1, message: e.to_string() })?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse { row: 1, message: format!("missing column `{name}`") })
    };
    let (tau_c, a_c) = (col("tau")?, col("action")?);
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        let parse = |c: usize| {
            rec.get(c)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse { row, message: e.to_string() })
        };
        out.push((parse(tau_c)? as u32, parse(a_c)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_examples() {
        assert_eq!(apply_action(100.0, 0.0, 2.0).unwrap(), 100.0);
        assert!((apply_action(100.0, 1.5, 2.0).unwrap() - 200.0).abs() < 1e-9);
        assert!(matches!(apply_action(0.0, 0.1, 2.0), Err(Error::Invariant(_))));
        let a = (519377.1f64 / 499175.5).ln();
        assert!((a - 0.0397).abs() < 1e-4);
    }

    #[test]
    fn smape_examples() {
        assert_eq!(smape_h(5.0, 5.0), 1.0);
        assert_eq!(smape_h(3.0, 0.0), -1.0);
        assert_eq!(smape_h(0.0, 0.0), 1.0);
        assert!((smape_h(495919.8, 490825.5) - 0.989_674_539_113_588_9).abs() < 1e-12);
    }

    #[test]
    fn accuracy_single_step() {
        assert_eq!(reward_accuracy(&[3.0], &[3.0], 0.99, 5.0, &[1.0]).unwrap(), 5.0);
        assert!(reward_accuracy(&[], &[], 0.99, 5.0, &[]).is_err());
    }

    #[test]
    fn stability_examples() {
        let ul = [519377.1, 519377.1, 490825.5, 495919.8];
        // ul[0] is unused at tau = 3 beyond indexing; only UL_1..UL_3 matter.
        let r = reward_stability(3, &ul, 0.0, false, 0.99, 2.0, 13).unwrap();
        assert!((r - 0.0363).abs() < 1e-4, "{r}");
        assert_eq!(reward_stability(3, &ul, 0.0, true, 0.99, 2.0, 13).unwrap(), 0.0);
        let flat = [7.0; 5];
        let r = reward_stability(3, &flat, 0.0, false, 0.99, 2.0, 10).unwrap();
        assert!((r + 0.01).abs() < 1e-12);
        assert!(reward_stability(0, &flat, 0.0, false, 0.99, 2.0, 10).is_err());
        assert!(reward_stability(4, &flat, 0.0, false, 0.99, 2.0, 4).is_err());
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(reward_smoothing(0.3, 4, 10, 2.0, true), 0.0);
        assert!((reward_smoothing(2f64.ln(), 9, 10, 2.0, false) + 1.0).abs() < 1e-12);
        let a = (277343.3f64 / 269355.0).ln();
        assert!((reward_smoothing(a, 5, 10, 2.0, false) + 0.0011).abs() < 5e-5);
    }

    #[test]
    fn weight_examples() {
        assert!((weight_settled(25.0, 0.7, 25.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((weight_settled(50.0, 1.0, 25.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((weight_open(80.0, 30.0, 50.0, 1.0, 25.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(weight_settled(0.0, 1.0, 25.0).unwrap(), 0.0);
        assert!(matches!(weight_settled(1.0, 1.0, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn profile_dims_agree() {
        for p in [StateProfile::Minimal, StateProfile::Cas, StateProfile::SpliceFull] {
            assert_eq!(p.feature_names(5).len(), p.dim(5));
            assert_eq!(p.feature_kinds(5).len(), p.dim(5));
        }
    }
}
