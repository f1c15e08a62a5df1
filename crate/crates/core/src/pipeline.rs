//! End-to-end experiment driver: data, split, tuning, the three models,
//! evaluation and on-disk reports with a hashed manifest.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain_ladder::{run_chain_ladder, ClResult, SmootherConfig};
use crate::claims::{load_transactions, Dataset, PeriodUnit, Schema};
use crate::env::{rollout_calendar, write_transition_log, EnvConfig, Policy, Transition};
use crate::error::{Error, Result};
use crate::eval::{
    self, action_histogram, check_fnn_training, check_rl_training, check_validation, metrics_report, rsv_folds,
    split, EvalRecord, Fold, FoldScore, GridScore, MetricsReport, SplitKind, SplitSpec,
};
use crate::fnn::{build_training_rows, mean_training_ocl, predict_ocl_fnn, train_fnn, FnnConfig, FnnModel};
use crate::init::{build_init_tables, ClaimInitialiser, InitTables};
use crate::sac::{self, write_train_log, SacConfig, TrainLogRow, TrainedPolicy};
use crate::sim::{self, simulate_portfolio};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    Simulate {
        preset: String,
        claims_per_period: Option<f64>,
        n_accident_periods: Option<u32>,
    },
    Ingest {
        path: PathBuf,
        schema: Schema,
        period_unit: PeriodUnit,
    },
}

impl DataConfig {
    pub fn period_unit(&self) -> Result<PeriodUnit> {
        match self {
            DataConfig::Simulate { preset, .. } => Ok(sim::preset(preset)?.period_unit),
            DataConfig::Ingest { period_unit, .. } => Ok(*period_unit),
        }
    }

    /// Loads or simulates the full dataset for `seed`.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DataConfig::Simulate {
                preset,
                claims_per_period,
                n_accident_periods,
            } => {
                let mut cfg = sim::preset(preset)?;
                cfg.seed = seed;
                if let Some(n) = claims_per_period {
                    cfg.mean_claims_per_period = *n;
                }
                if let Some(n) = n_accident_periods {
                    cfg.n_accident_periods = *n;
                }
                simulate_portfolio(&cfg)
            }
            DataConfig::Ingest {
                path,
                schema,
                period_unit,
            } => load_transactions(path, *schema, *period_unit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Valuation period; 40 for quarterly and 15 for yearly data when absent.
    pub valuation: Option<u32>,
    pub folds: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            valuation: None,
            folds: 3,
        }
    }
}

pub fn default_valuation(unit: PeriodUnit) -> u32 {
    match unit {
        PeriodUnit::Quarter => 40,
        PeriodUnit::Year => 15,
    }
}

/// One RL grid point; absent fields keep the base configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlOverride {
    pub alpha_w: Option<f64>,
    pub k: Option<f64>,
    pub c: Option<f64>,
    pub m_warmup: Option<u32>,
    pub actor_lr: Option<f64>,
    pub critic_lr: Option<f64>,
    pub updates_per_step: Option<usize>,
    pub hidden: Option<Vec<usize>>,
}

impl RlOverride {
    pub fn apply(&self, env: &EnvConfig, sac: &SacConfig) -> (EnvConfig, SacConfig) {
        let mut env = env.clone();
        let mut sac = sac.clone();
        if let Some(v) = self.alpha_w {
            env.alpha_w = v;
        }
        if let Some(v) = self.k {
            env.k = v;
        }
        if let Some(v) = self.c {
            env.c = v;
        }
        if let Some(v) = self.m_warmup {
            env.m_warmup = v;
        }
        if let Some(v) = self.actor_lr {
            sac.actor_lr = v;
        }
        if let Some(v) = self.critic_lr {
            sac.critic_lr = v;
        }
        if let Some(v) = self.updates_per_step {
            sac.updates_per_step = v;
        }
        if let Some(v) = &self.hidden {
            sac.hidden = v.clone();
        }
        (env, sac)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FnnOverride {
    pub alpha_w: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub dropout: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
}

impl FnnOverride {
    pub fn apply(&self, base: &FnnConfig) -> FnnConfig {
        let mut cfg = base.clone();
        if let Some(v) = self.alpha_w {
            cfg.alpha_w = v;
        }
        if let Some(v) = &self.hidden {
            cfg.hidden = v.clone();
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    pub enabled: bool,
    pub rl: Vec<RlOverride>,
    pub fnn: Vec<FnnOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelToggles {
    pub rl: bool,
    pub fnn: bool,
    pub chain_ladder: bool,
}

impl Default for ModelToggles {
    fn default() -> Self {
        ModelToggles {
            rl: true,
            fnn: true,
            chain_ladder: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    /// Importance-weight scale; the mean training OCL when absent.
    #[serde(default)]
    pub weight_scale: Option<f64>,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub sac: SacConfig,
    #[serde(default)]
    pub fnn: FnnConfig,
    #[serde(default)]
    pub chain_ladder: SmootherConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default)]
    pub models: ModelToggles,
    #[serde(default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical serialisation.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    pub fn valuation(&self) -> Result<u32> {
        Ok(self.split.valuation.unwrap_or(default_valuation(self.data.period_unit()?)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if let DataConfig::Simulate { preset, .. } = &self.data {
            sim::preset(preset)?;
        }
        if self.valuation()? == 0 {
            return Err(Error::Config("valuation must be >= 1".into()));
        }
        if self.tuning.enabled && self.split.folds < 2 {
            return Err(Error::Config("tuning needs folds >= 2".into()));
        }
        if let Some(s) = self.weight_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config("weight_scale must be > 0".into()));
            }
        }
        self.env.validate()?;
        self.sac.validate()?;
        self.fnn.validate()?;
        for g in &self.tuning.rl {
            let (env, sac) = g.apply(&self.env, &self.sac);
            env.validate()?;
            sac.validate()?;
        }
        for g in &self.tuning.fnn {
            g.apply(&self.fnn).validate()?;
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Deterministic per-job seed derived from a run seed and a job label.
pub fn job_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("eight bytes"))
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name.to_string(),
            source: Box::new(other),
        },
    })
}

/// Evaluation records for `preds` at `valuation`, with truth from `truth`.
pub fn evaluation_records(truth: &Dataset, preds: &[(u64, f64)], valuation: u32) -> Result<Vec<EvalRecord>> {
    preds
        .iter()
        .map(|&(id, pred)| {
            let c = truth
                .claim(id)
                .ok_or_else(|| Error::Data(format!("claim {id} missing from the evaluation data")))?;
            let ultimate = c
                .ultimate()
                .ok_or_else(|| Error::Data(format!("claim {id} has no known ultimate")))?;
            Ok(EvalRecord {
                claim_no: id,
                accident_period: c.accident_period,
                psn: c.psn_at(valuation),
                pred,
                actual: ultimate - c.paid_at_calendar(valuation),
                ultimate,
            })
        })
        .collect()
}

/// Keeps predictions for `claims` and fails if any of them is missing.
pub fn select(preds: &[(u64, f64)], claims: &[u64]) -> Result<Vec<(u64, f64)>> {
    let by_id: HashMap<u64, f64> = preds.iter().copied().collect();
    claims
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .map(|p| (*id, *p))
                .ok_or_else(|| Error::Invariant(format!("no prediction for claim {id}")))
        })
        .collect()
}

/// Model state after RL training plus its deterministic valuation rollout.
#[derive(Debug, Clone)]
pub struct RlFit {
    pub policy: TrainedPolicy,
    pub log: Vec<TrainLogRow>,
    pub training: Vec<Transition>,
    pub rollout: Vec<Transition>,
    /// `(claim, OCL)` at the valuation for every claim open there.
    pub predictions: Vec<(u64, f64)>,
}

fn valuation_predictions(preds: &[crate::env::Prediction], valuation: u32) -> Vec<(u64, f64)> {
    preds
        .iter()
        .filter(|p| p.calendar_period == valuation)
        .map(|p| (p.claim_no, p.pred_ocl))
        .collect()
}

/// Trains SAC on `train` (observed to `valuation`) and replays the frozen
/// policy deterministically.
pub fn fit_rl(train: &Dataset, init: &dyn ClaimInitialiser, env: &EnvConfig, sac_cfg: &SacConfig) -> Result<RlFit> {
    let valuation = train.max_calendar_period;
    let outcome = sac::train(train, init, env, sac_cfg)?;
    let mut policy = outcome.policy.clone();
    let out = rollout_calendar(train, &mut policy as &mut dyn Policy, init, env, false)?;
    Ok(RlFit {
        predictions: valuation_predictions(&out.predictions, valuation),
        policy: outcome.policy,
        log: outcome.log,
        training: outcome.transitions,
        rollout: out.transitions,
    })
}

/// Weight scale: the configured one or the mean training OCL.
pub fn weight_scale(train: &Dataset, valuation: u32, configured: Option<f64>) -> Result<f64> {
    match configured {
        Some(s) => Ok(s),
        None => mean_training_ocl(train, valuation),
    }
}

fn score(truth: &Dataset, preds: &[(u64, f64)], claims: &[u64], boundary: u32) -> Result<FoldScore> {
    let recs = evaluation_records(truth, &select(preds, claims)?, boundary)?;
    Ok(FoldScore {
        ratio: eval::overall_ratio(&recs),
        rmse: eval::rmse_per_claim(&recs, eval::GroupBy::Overall).get(&0).copied().unwrap_or(f64::NAN),
    })
}

/// Scores one RL configuration on one fold, with leakage checks.
pub fn rl_fold_score(
    source: &Dataset,
    fold: &Fold,
    env: &EnvConfig,
    sac_cfg: &SacConfig,
    scale: Option<f64>,
) -> Result<FoldScore> {
    let b = fold.boundary;
    let init = build_init_tables(&fold.rl_train, b)?;
    let env = EnvConfig {
        s: weight_scale(&fold.rl_train, b, scale)?,
        ..env.clone()
    };
    let fit = fit_rl(&fold.rl_train, &init, &env, sac_cfg)?;
    check_rl_training(&fold.rl_train, &fit.training, b)?;
    check_validation(source, &fold.validation, b)?;
    score(source, &fit.predictions, &fold.validation, b)
}

pub fn fnn_fold_score(source: &Dataset, fold: &Fold, cfg: &FnnConfig, seed: u64) -> Result<FoldScore> {
    let b = fold.boundary;
    let cfg = FnnConfig {
        s: cfg.s.or(Some(weight_scale(&fold.rl_train, b, None)?)),
        ..cfg.clone()
    };
    let (rows, s) = build_training_rows(&fold.fnn_train, b, &cfg)?;
    check_fnn_training(source, &rows, b)?;
    check_validation(source, &fold.validation, b)?;
    let out = train_fnn(&rows, s, &cfg, seed)?;
    let preds = predict_ocl_fnn(&out.model, &fold.rl_train, b)?;
    score(source, &preds, &fold.validation, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    pub family: String,
    pub index: usize,
    pub config: String,
    pub mean_distance: Option<f64>,
    pub mean_rmse: f64,
    pub fold_ratios: String,
    pub selected: bool,
    pub error: Option<String>,
}

fn tuning_rows<C: Serialize>(family: &str, grid: &[C], scores: &[GridScore], best: usize) -> Vec<TuningRow> {
    scores
        .iter()
        .map(|s| TuningRow {
            family: family.to_string(),
            index: s.index,
            config: serde_json::to_string(&grid[s.index]).unwrap_or_default(),
            mean_distance: s.mean_distance,
            mean_rmse: s.mean_rmse,
            fold_ratios: s
                .fold_ratios
                .iter()
                .map(|r| r.map_or_else(String::new, |r| r.to_string()))
                .collect::<Vec<_>>()
                .join(";"),
            selected: s.index == best,
            error: s.error.clone(),
        })
        .collect()
}

/// RSV tuning of the RL grid on training data observed to its horizon.
pub fn tune_rl(
    train: &Dataset,
    folds: &[Fold],
    grid: &[RlOverride],
    env: &EnvConfig,
    sac_cfg: &SacConfig,
    scale: Option<f64>,
    seed: u64,
) -> Result<(RlOverride, Vec<TuningRow>)> {
    let res = eval::tune(grid, folds, |g, f| {
        let (env, mut sac_cfg) = g.apply(env, sac_cfg);
        sac_cfg.seed = job_seed(seed, "tune-rl", f.index as u64);
        rl_fold_score(train, f, &env, &sac_cfg, scale)
    })?;
    let rows = tuning_rows("rl", grid, &res.scores, res.best_index);
    Ok((res.best, rows))
}

pub fn tune_fnn(
    train: &Dataset,
    folds: &[Fold],
    grid: &[FnnOverride],
    base: &FnnConfig,
    seed: u64,
) -> Result<(FnnOverride, Vec<TuningRow>)> {
    let res = eval::tune(grid, folds, |g, f| {
        fnn_fold_score(train, f, &g.apply(base), job_seed(seed, "tune-fnn", f.index as u64))
    })?;
    let rows = tuning_rows("fnn", grid, &res.scores, res.best_index);
    Ok((res.best, rows))
}

/// Chain-ladder relative OCL by accident period against per-claim truth.
pub fn chain_ladder_report(cl: &ClResult, truth: &[EvalRecord]) -> MetricsReport {
    let mut actual: BTreeMap<u32, f64> = BTreeMap::new();
    for r in truth {
        *actual.entry(r.accident_period).or_default() += r.actual;
    }
    let pred: BTreeMap<u32, f64> = cl.rbns_by_ap().into_iter().collect();
    let ratio = |p: f64, a: f64| (a > 0.0).then(|| p / a);
    let relative_by_ap = actual
        .iter()
        .map(|(ap, a)| (*ap, ratio(pred.get(ap).copied().unwrap_or(0.0), *a)))
        .collect();
    let total_actual: f64 = actual.values().sum();
    let mut m = metrics_report(&[]);
    m.n_claims = truth.len();
    m.relative_ocl = ratio(cl.total_rbns_ocl, total_actual);
    m.relative_by_ap = relative_by_ap;
    m.share_by_ap = eval::ocl_share_curve(truth, eval::GroupBy::Ap);
    m.share_by_psn = eval::ocl_share_curve(truth, eval::GroupBy::Psn);
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub model: String,
    pub n_claims: usize,
    pub relative_ocl: Option<f64>,
    pub rmse: Option<f64>,
    pub small: Option<f64>,
    pub medium: Option<f64>,
    pub large: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seed: u64,
    pub stage: String,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileRecord>,
    pub complete: bool,
    pub error: Option<String>,
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub reports: Vec<(String, MetricsReport)>,
    pub records: BTreeMap<String, Vec<EvalRecord>>,
    pub tuned_rl: Option<RlOverride>,
    pub tuned_fnn: Option<FnnOverride>,
}

impl SeedRun {
    pub fn summary(&self) -> Vec<SummaryRow> {
        self.reports
            .iter()
            .map(|(model, m)| SummaryRow {
                seed: self.seed,
                model: model.clone(),
                n_claims: m.n_claims,
                relative_ocl: m.relative_ocl,
                rmse: m.rmse,
                small: m.size_terciles[0],
                medium: m.size_terciles[1],
                large: m.size_terciles[2],
            })
            .collect()
    }
}

struct Recorder<'a> {
    seed: u64,
    dir: &'a Path,
    files: Vec<PathBuf>,
    stages: Vec<StageRecord>,
}

impl Recorder<'_> {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let r = stage(name, f());
        self.stages.push(StageRecord {
            seed: self.seed,
            stage: name.to_string(),
            ok: r.is_ok(),
        });
        r
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let path = self.dir.join(name);
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }
}

fn write_csv_rows<T: Serialize>(rows: &[T], w: &mut Vec<u8>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(|e| Error::Data(format!("writing csv: {e}")))?;
    }
    wtr.flush().map_err(|e| Error::io("csv", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub model: String,
    pub claim_no: u64,
    pub accident_period: u32,
    pub psn: u32,
    pub pred_ocl: f64,
    pub true_ocl: f64,
    pub ultimate: f64,
}

pub fn write_tuning_csv<W: std::io::Write>(rows: &[TuningRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(|e| Error::Data(format!("writing tuning table: {e}")))?;
    }
    wtr.flush().map_err(|e| Error::io("tuning table", e))
}

/// Reads a predictions file back into per-model evaluation records, models
/// in order of first appearance.
pub fn read_predictions<R: std::io::Read>(r: R) -> Result<Vec<(String, Vec<EvalRecord>)>> {
    let mut out: Vec<(String, Vec<EvalRecord>)> = Vec::new();
    for (k, row) in csv::Reader::from_reader(r).deserialize::<PredictionRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            row: k + 2,
            message: e.to_string(),
        })?;
        let rec = EvalRecord {
            claim_no: row.claim_no,
            accident_period: row.accident_period,
            psn: row.psn,
            pred: row.pred_ocl,
            actual: row.true_ocl,
            ultimate: row.ultimate,
        };
        match out.iter_mut().find(|(m, _)| *m == row.model) {
            Some((_, v)) => v.push(rec),
            None => out.push((row.model, vec![rec])),
        }
    }
    Ok(out)
}

/// Data for one seed split at the valuation, with initialisation tables
/// and the weight scale.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub valuation: u32,
    pub full: Dataset,
    pub train: Dataset,
    pub test_claims: Vec<u64>,
    pub init: InitTables,
    pub scale: f64,
}

impl Prepared {
    pub fn env(&self, base: &EnvConfig) -> EnvConfig {
        EnvConfig {
            s: self.scale,
            ..base.clone()
        }
    }

    pub fn fnn(&self, base: &FnnConfig) -> FnnConfig {
        FnnConfig {
            s: Some(base.s.unwrap_or(self.scale)),
            ..base.clone()
        }
    }

    /// Evaluation records at the valuation for the test claims.
    pub fn records(&self, preds: &[(u64, f64)]) -> Result<Vec<EvalRecord>> {
        evaluation_records(&self.full, &select(preds, &self.test_claims)?, self.valuation)
    }
}

pub fn prepare_data(cfg: &RunConfig, seed: u64) -> Result<Prepared> {
    let mut rec = Recorder {
        seed,
        dir: Path::new("."),
        files: Vec::new(),
        stages: Vec::new(),
    };
    prepare(cfg, None, seed, &mut rec)
}

fn prepare(cfg: &RunConfig, data: Option<&Dataset>, seed: u64, rec: &mut Recorder) -> Result<Prepared> {
    let valuation = cfg.valuation()?;
    let full = rec.run("data", || match data {
        Some(d) => Ok(d.clone()),
        None => cfg.data.load(seed),
    })?;
    let sp = rec.run("split", || split(&full, &SplitSpec::new(SplitKind::Ts, valuation)))?;
    let init = rec.run("init", || build_init_tables(&sp.train, valuation))?;
    let scale = rec.run("weight_scale", || weight_scale(&sp.train, valuation, cfg.weight_scale))?;
    Ok(Prepared {
        valuation,
        full,
        train: sp.train,
        test_claims: sp.test_claims,
        init,
        scale,
    })
}

/// Runs every stage for one seed and writes its artifacts under `dir`.
pub fn run_seed(cfg: &RunConfig, seed: u64, data: Option<&Dataset>, dir: &Path) -> (Result<SeedRun>, Vec<StageRecord>, Vec<PathBuf>) {
    let mut rec = Recorder {
        seed,
        dir,
        files: Vec::new(),
        stages: Vec::new(),
    };
    let r = run_seed_inner(cfg, seed, data, &mut rec);
    (r, rec.stages, rec.files)
}

fn run_seed_inner(cfg: &RunConfig, seed: u64, data: Option<&Dataset>, rec: &mut Recorder) -> Result<SeedRun> {
    fs::create_dir_all(rec.dir).map_err(|e| Error::io(rec.dir, e))?;
    let valuation = cfg.valuation()?;
    let p = prepare(cfg, data, seed, rec)?;
    let init_tables = p.init.clone();
    rec.write("init_tables.csv", |w| init_tables.write_csv(w))?;

    let mut env = p.env(&cfg.env);
    let mut sac_cfg = cfg.sac.clone();
    sac_cfg.seed = job_seed(seed, "rl", 0);
    let mut fnn_cfg = p.fnn(&cfg.fnn);
    let mut tuned_rl = None;
    let mut tuned_fnn = None;

    if cfg.tuning.enabled {
        let folds = rec.run("folds", || rsv_folds(&p.train, cfg.split.folds))?;
        let mut rows = Vec::new();
        if cfg.models.rl && !cfg.tuning.rl.is_empty() {
            let (best, r) = rec.run("tune_rl", || {
                tune_rl(&p.train, &folds, &cfg.tuning.rl, &env, &sac_cfg, cfg.weight_scale, seed)
            })?;
            (env, sac_cfg) = best.apply(&env, &sac_cfg);
            tuned_rl = Some(best);
            rows.extend(r);
        }
        if cfg.models.fnn && !cfg.tuning.fnn.is_empty() {
            let (best, r) = rec.run("tune_fnn", || tune_fnn(&p.train, &folds, &cfg.tuning.fnn, &cfg.fnn, seed))?;
            fnn_cfg = best.apply(&fnn_cfg);
            tuned_fnn = Some(best);
            rows.extend(r);
        }
        rec.write("tuning.csv", |w| write_tuning_csv(&rows, w))?;
    }

    let truth_all = {
        let zero: Vec<(u64, f64)> = p.test_claims.iter().map(|c| (*c, 0.0)).collect();
        rec.run("truth", || evaluation_records(&p.full, &zero, valuation))?
    };
    let mut reports = Vec::new();
    let mut records = BTreeMap::new();

    if cfg.models.rl {
        let fit = rec.run("train_rl", || fit_rl(&p.train, &p.init, &env, &sac_cfg))?;
        rec.run("leakage_rl", || check_rl_training(&p.train, &fit.training, valuation))?;
        let preds = rec.run("predict_rl", || select(&fit.predictions, &p.test_claims))?;
        let recs = rec.run("evaluate_rl", || evaluation_records(&p.full, &preds, valuation))?;
        rec.write("transitions.csv", |w| write_transition_log(&fit.rollout, w))?;
        rec.write("train_log.csv", |w| write_train_log(&fit.log, w))?;
        let json = fit.policy.to_json()?;
        rec.write("rl_policy.json", |w| {
            w.extend_from_slice(json.as_bytes());
            Ok(())
        })?;
        let actions: Vec<(u32, f64)> = fit.rollout.iter().map(|t| (t.tau, t.action)).collect();
        let hist = action_histogram(&actions, 15, env.k, true)?;
        rec.write("action_histogram.csv", |w| eval::write_histogram_csv(&hist, w))?;
        reports.push(("rl".to_string(), metrics_report(&recs)));
        records.insert("rl".to_string(), recs);
    }

    if cfg.models.fnn {
        let model: FnnModel = rec.run("train_fnn", || {
            let (rows, s) = build_training_rows(&p.train, valuation, &fnn_cfg)?;
            check_fnn_training(&p.full, &rows, valuation)?;
            Ok(train_fnn(&rows, s, &fnn_cfg, job_seed(seed, "fnn", 0))?.model)
        })?;
        let preds = rec.run("predict_fnn", || select(&predict_ocl_fnn(&model, &p.train, valuation)?, &p.test_claims))?;
        let recs = rec.run("evaluate_fnn", || evaluation_records(&p.full, &preds, valuation))?;
        let json = model.to_json()?;
        rec.write("fnn_model.json", |w| {
            w.extend_from_slice(json.as_bytes());
            Ok(())
        })?;
        reports.push(("fnn".to_string(), metrics_report(&recs)));
        records.insert("fnn".to_string(), recs);
    }

    if cfg.models.chain_ladder {
        let cl = rec.run("chain_ladder", || run_chain_ladder(&p.train, valuation, &cfg.chain_ladder))?;
        rec.write("chain_ladder.csv", |w| cl.write_csv(w))?;
        reports.push(("chain_ladder".to_string(), chain_ladder_report(&cl, &truth_all)));
    }

    let named: Vec<(&str, &MetricsReport)> = reports.iter().map(|(n, m)| (n.as_str(), m)).collect();
    rec.write("metrics.csv", |w| eval::write_metrics_csv(&named, w))?;
    let pred_rows: Vec<PredictionRow> = records
        .iter()
        .flat_map(|(model, recs)| {
            recs.iter().map(move |r| PredictionRow {
                model: model.clone(),
                claim_no: r.claim_no,
                accident_period: r.accident_period,
                psn: r.psn,
                pred_ocl: r.pred,
                true_ocl: r.actual,
                ultimate: r.ultimate,
            })
        })
        .collect();
    rec.write("predictions.csv", |w| write_csv_rows(&pred_rows, w))?;

    Ok(SeedRun {
        seed,
        reports,
        records,
        tuned_rl,
        tuned_fnn,
    })
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(m).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn file_records(root: &Path, files: &[PathBuf]) -> Result<Vec<FileRecord>> {
    files
        .iter()
        .map(|f| {
            let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
            Ok(FileRecord {
                path: f.strip_prefix(root).unwrap_or(f).to_string_lossy().replace('\\', "/"),
                sha256: sha256_hex(&bytes),
            })
        })
        .collect()
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

/// Runs the whole experiment. Seeds are spread over `workers` threads and
/// reduced in seed order. On failure the manifest written so far is kept on
/// disk and the stage error is returned.
pub fn run_pipeline(cfg: &RunConfig) -> Result<(Manifest, Vec<SeedRun>)> {
    cfg.validate()?;
    let root = &cfg.output_dir;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = Manifest {
        version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
        config_sha256: cfg.hash()?,
        seeds: cfg.seeds.clone(),
        stages: Vec::new(),
        files: Vec::new(),
        complete: false,
        error: None,
    };
    let config_path = root.join("config.toml");
    fs::write(&config_path, cfg.to_toml()?).map_err(|e| Error::io(&config_path, e))?;
    write_manifest(root, &manifest)?;

    // Ingested data is shared by every seed.
    let shared = match &cfg.data {
        DataConfig::Ingest { .. } => match stage("data", cfg.data.load(0)) {
            Ok(d) => Some(d),
            Err(e) => {
                manifest.error = Some(e.to_string());
                write_manifest(root, &manifest)?;
                return Err(e);
            }
        },
        DataConfig::Simulate { .. } => None,
    };

    type Slot = Option<(Result<SeedRun>, Vec<StageRecord>, Vec<PathBuf>)>;
    let slots: Mutex<Vec<Slot>> = Mutex::new((0..cfg.seeds.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.min(cfg.seeds.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= cfg.seeds.len() {
                    break;
                }
                let seed = cfg.seeds[k];
                let out = run_seed(cfg, seed, shared.as_ref(), &seed_dir(root, seed));
                slots.lock().expect("no worker panicked while holding the lock")[k] = Some(out);
            });
        }
    });

    let mut runs = Vec::new();
    let mut files = vec![config_path];
    let mut first_error = None;
    for slot in slots.into_inner().expect("workers joined") {
        let (r, stages, f) = slot.expect("every seed ran");
        manifest.stages.extend(stages);
        files.extend(f);
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    if first_error.is_none() {
        let summary: Vec<SummaryRow> = runs.iter().flat_map(SeedRun::summary).collect();
        let mut buf = Vec::new();
        write_csv_rows(&summary, &mut buf)?;
        let path = root.join(SUMMARY_FILE);
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        files.push(path);
    }
    manifest.files = file_records(root, &files)?;
    match first_error {
        Some(e) => {
            manifest.error = Some(e.to_string());
            write_manifest(root, &manifest)?;
            Err(e)
        }
        None => {
            manifest.complete = true;
            write_manifest(root, &manifest)?;
            Ok((manifest, runs))
        }
    }
}
