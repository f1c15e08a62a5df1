//! Supervised feed-forward benchmark trained on settled claims with an
//! importance-weighted MSE.
//!
//! The network output `o` maps to an OCL of `s * expm1(o)`, floored at
//! zero, and the loss is measured in units of the weight scale `s`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::claims::{Claim, Dataset, DevelopmentRecord, PeriodUnit};
use crate::env::{weight_settled, FeatureKind, StateProfile};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, FeatureScaler, Mlp};

const MAX_LOG_OUTPUT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FnnConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub alpha_w: f64,
    /// Weight scale; the mean training OCL when absent.
    pub s: Option<f64>,
    pub patience: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub profile: StateProfile,
}

impl Default for FnnConfig {
    fn default() -> Self {
        FnnConfig {
            hidden: vec![32, 32],
            batch_size: 128,
            dropout: 0.0,
            learning_rate: 1e-3,
            alpha_w: 0.0,
            s: None,
            patience: 5,
            max_epochs: 100,
            validation_fraction: 0.2,
            profile: StateProfile::SpliceFull,
        }
    }
}

impl FnnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("FNN sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if !(self.alpha_w >= 0.0) {
            return Err(Error::Config("alpha_w must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnRow {
    pub claim_no: u64,
    pub accident_period: u32,
    pub dev_period: u32,
    pub features: Vec<f64>,
    pub target: f64,
    pub weight: f64,
}

/// State features without any model predictions.
pub fn feature_kinds(profile: StateProfile) -> Vec<FeatureKind> {
    use FeatureKind::*;
    let mut k = vec![Plain, Plain, Currency];
    if profile != StateProfile::Minimal {
        k.push(Plain);
    }
    if profile == StateProfile::SpliceFull {
        k.extend([Plain; 8]);
        k.push(Currency);
    }
    k
}

pub fn features(claim: &Claim, rec: &DevelopmentRecord, profile: StateProfile, unit: PeriodUnit) -> Vec<f64> {
    let mut v = vec![claim.accident_period as f64, rec.dev_period as f64, rec.cum_paid];
    if profile != StateProfile::Minimal {
        v.push(claim.repdel as f64);
    }
    if profile == StateProfile::SpliceFull {
        v.extend(rec.txn_types.one_hot());
        v.push(rec.n_pay as f64);
        let (aq, dq) = match unit {
            PeriodUnit::Quarter => ((claim.accident_period - 1) % 4 + 1, (rec.dev_period - 1) % 4 + 1),
            PeriodUnit::Year => (1, 1),
        };
        v.extend([aq as f64, dq as f64, rec.case.unwrap_or(0.0)]);
    }
    v
}

/// Mean positive true OCL over the development records of claims settled
/// by `cutoff`.
pub fn mean_training_ocl(train: &Dataset, cutoff: u32) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for c in train.claims.iter().filter(|c| c.is_settled_by(cutoff)) {
        for r in &c.dev_records {
            if let Some(o) = r.true_ocl.filter(|o| *o > 0.0) {
                sum += o;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Data("no positive OCL among settled training claims".into()));
    }
    Ok(sum / n as f64)
}

/// One row per development record, notification to settlement, of every
/// claim settled by `cutoff`.
pub fn build_training_rows(train: &Dataset, cutoff: u32, cfg: &FnnConfig) -> Result<(Vec<FnnRow>, f64)> {
    let settled: Vec<&Claim> = train.claims.iter().filter(|c| c.is_settled_by(cutoff)).collect();
    if settled.is_empty() {
        return Err(Error::Data("no claims settled by the training cutoff".into()));
    }
    let s = match cfg.s {
        Some(s) => s,
        None => mean_training_ocl(train, cutoff)?,
    };
    let mut rows = Vec::new();
    for c in settled {
        for r in &c.dev_records {
            let target = r.true_ocl.unwrap_or(0.0);
            rows.push(FnnRow {
                claim_no: c.claim_no,
                accident_period: c.accident_period,
                dev_period: r.dev_period,
                features: features(c, r, cfg.profile, train.period_unit),
                target,
                weight: weight_settled(target, cfg.alpha_w, s)?,
            });
        }
    }
    Ok((rows, s))
}

pub fn weighted_mse(preds: &[f64], targets: &[f64], weights: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() || preds.len() != weights.len() {
        return Err(Error::Dimension {
            expected: targets.len(),
            got: preds.len().min(weights.len()),
        });
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::Data("weights sum to zero".into()));
    }
    let num: f64 = preds
        .iter()
        .zip(targets)
        .zip(weights)
        .map(|((p, y), w)| w * (p - y) * (p - y))
        .sum();
    Ok(num / wsum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnModel {
    pub net: Mlp,
    pub scaler: FeatureScaler,
    pub s: f64,
    pub profile: StateProfile,
}

impl FnnModel {
    /// Predicted OCL in currency, floored at zero.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        let o = self.net.forward(&self.scaler.transform(features))?[0];
        Ok(self.s * o.min(MAX_LOG_OUTPUT).exp_m1().max(0.0))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Data(format!("serialising FNN: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Data(format!("parsing FNN: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnnOutcome {
    pub model: FnnModel,
    pub epochs: usize,
    /// `(train_loss, validation_loss)` per epoch, in units of `s^2`.
    pub history: Vec<(f64, f64)>,
    pub train_claims: BTreeSet<u64>,
    pub validation_claims: BTreeSet<u64>,
}

fn loss_in_units(model_net: &Mlp, scaler: &FeatureScaler, rows: &[&FnnRow], s: f64) -> Result<Option<f64>> {
    if rows.is_empty() {
        return Ok(None);
    }
    let mut preds = Vec::with_capacity(rows.len());
    for r in rows {
        let o = model_net.forward(&scaler.transform(&r.features))?[0];
        preds.push(o.min(MAX_LOG_OUTPUT).exp_m1().max(0.0));
    }
    let targets: Vec<f64> = rows.iter().map(|r| r.target / s).collect();
    let weights: Vec<f64> = rows.iter().map(|r| r.weight).collect();
    match weighted_mse(&preds, &targets, &weights) {
        Ok(v) => Ok(Some(v)),
        Err(Error::Data(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Minibatch Adam on the weighted MSE with early stopping on a held-out
/// 20% of claims. Training stops once `patience` epochs pass without a
/// validation improvement; the best parameters are returned.
pub fn train_fnn(rows: &[FnnRow], s: f64, cfg: &FnnConfig, seed: u64) -> Result<FnnOutcome> {
    cfg.validate()?;
    if rows.len() < 2 {
        return Err(Error::Data(format!("FNN needs at least 2 rows, got {}", rows.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut claims: Vec<u64> = rows.iter().map(|r| r.claim_no).collect::<BTreeSet<_>>().into_iter().collect();
    claims.shuffle(&mut rng);
    let n_val = if claims.len() >= 2 {
        ((claims.len() as f64 * cfg.validation_fraction).round() as usize).min(claims.len() - 1)
    } else {
        0
    };
    let validation_claims: BTreeSet<u64> = claims[..n_val].iter().copied().collect();
    let train_claims: BTreeSet<u64> = claims[n_val..].iter().copied().collect();
    let train_rows: Vec<&FnnRow> = rows.iter().filter(|r| train_claims.contains(&r.claim_no)).collect();
    let val_rows: Vec<&FnnRow> = rows.iter().filter(|r| validation_claims.contains(&r.claim_no)).collect();

    let kinds = feature_kinds(cfg.profile);
    let scaler = FeatureScaler::fit(kinds, train_rows.iter().map(|r| r.features.as_slice()))?;
    let mut net = Mlp::standard(scaler.dim(), &cfg.hidden, 1, Activation::Relu, &mut rng)?;
    // Start the output at the weighted mean target.
    let wsum: f64 = train_rows.iter().map(|r| r.weight).sum();
    if wsum > 0.0 {
        let mean = train_rows.iter().map(|r| r.weight * r.target / s).sum::<f64>() / wsum;
        let last = net.n_params() - 1;
        net.params_mut()[last] = mean.max(1e-6).ln_1p();
    }
    let mut adam = Adam::new(net.n_params(), cfg.learning_rate);

    let mut best = (f64::INFINITY, net.clone());
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    let mut epochs = 0;
    let mut grad = vec![0.0; net.n_params()];
    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let bw: f64 = chunk.iter().map(|i| train_rows[*i].weight).sum();
            if bw <= 0.0 {
                continue;
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                let r = train_rows[i];
                if r.weight == 0.0 {
                    continue;
                }
                let x = scaler.transform(&r.features);
                let cache = if cfg.dropout > 0.0 {
                    net.forward_dropout(&x, cfg.dropout, &mut rng)?
                } else {
                    net.forward_cached(&x)?
                };
                let o = cache.output[0];
                let (p, dp) = if o < MAX_LOG_OUTPUT { (o.exp_m1(), o.exp()) } else { (MAX_LOG_OUTPUT.exp_m1(), 0.0) };
                let d = 2.0 * r.weight * (p - r.target / s) * dp / bw;
                net.backward(&cache, &[d], &mut grad)?;
            }
            if !grad.iter().all(|g| g.is_finite()) {
                return Err(Error::Numeric(format!("FNN gradient diverged in epoch {epoch}")));
            }
            adam.step(net.params_mut(), &grad)?;
        }
        let train_loss = loss_in_units(&net, &scaler, &train_rows, s)?.unwrap_or(f64::NAN);
        let val_loss = loss_in_units(&net, &scaler, &val_rows, s)?.unwrap_or(train_loss);
        if !train_loss.is_finite() && wsum > 0.0 {
            return Err(Error::Numeric(format!("FNN loss diverged in epoch {epoch}")));
        }
        history.push((train_loss, val_loss));
        if val_loss < best.0 || epoch == 1 {
            best = (val_loss, net.clone());
            best_epoch = epoch;
        }
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    Ok(FnnOutcome {
        model: FnnModel {
            net: best.1,
            scaler,
            s,
            profile: cfg.profile,
        },
        epochs,
        history,
        train_claims,
        validation_claims,
    })
}

/// OCL predictions at `valuation` for claims open at that period.
pub fn predict_ocl_fnn(model: &FnnModel, data: &Dataset, valuation: u32) -> Result<Vec<(u64, f64)>> {
    let mut out = Vec::new();
    for c in &data.claims {
        if c.notification_period > valuation || c.is_settled_by(valuation) {
            continue;
        }
        if let Some(r) = c.record_at_calendar(valuation) {
            out.push((c.claim_no, model.predict(&features(c, r, model.profile, data.period_unit))?));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_mse_examples() {
        assert_eq!(weighted_mse(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap(), 2.5);
        assert_eq!(weighted_mse(&[3.0], &[3.0], &[2.0]).unwrap(), 0.0);
        assert_eq!(weighted_mse(&[2.0, 5.0], &[0.0, 5.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert!(weighted_mse(&[1.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn floor_rule() {
        let mut net = Mlp::zeros(&[3, 1], &[Activation::Identity]).unwrap();
        net.set_layer(0, &[0.0; 3], &[-2.0]).unwrap();
        let model = FnnModel {
            net,
            scaler: FeatureScaler::identity(feature_kinds(StateProfile::Minimal)),
            s: 10.0,
            profile: StateProfile::Minimal,
        };
        assert_eq!(model.predict(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }
}
