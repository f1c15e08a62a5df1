use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use reserve_core::chain_ladder::run_chain_ladder;
use reserve_core::claims::{load_transactions, PeriodUnit, Schema};
use reserve_core::env::{read_transition_actions, rollout_calendar, write_transition_log};
use reserve_core::eval::{self, action_histogram, metrics_report, rsv_folds};
use reserve_core::fnn::{build_training_rows, predict_ocl_fnn, train_fnn, FnnModel};
use reserve_core::golden::{default_fixture_dir, verify_worked_example};
use reserve_core::pipeline::{self, chain_ladder_report, fit_rl, job_seed, prepare_data, RunConfig};
use reserve_core::sac::{write_train_log, TrainedPolicy};
use reserve_core::sim;
use reserve_core::{Error, Result};

/// Micro-level claims reserving with reinforcement learning, a supervised
/// network and a chain-ladder benchmark.
#[derive(Parser)]
#[command(name = "reserve", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a claims portfolio and write its transactions as CSV.
    Simulate {
        #[arg(long, default_value = "complexity1")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        claims_per_period: Option<f64>,
        /// Output layout.
        #[arg(long, default_value = "splice")]
        schema: Schema,
        #[arg(long)]
        out: PathBuf,
    },
    /// Read a transaction file and write its development records.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "splice")]
        schema: Schema,
        #[arg(long, default_value = "quarter")]
        period_unit: PeriodUnit,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the SAC reserving agent and write the frozen policy.
    TrainRl(StageArgs),
    /// Train the supervised network baseline.
    TrainFnn(StageArgs),
    /// Run the IBNR-stripped chain ladder.
    ChainLadder(StageArgs),
    /// Rolling settlement validation over the configured grids.
    Tune(StageArgs),
    /// Score saved models at the valuation date.
    Evaluate {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        fnn_model: Option<PathBuf>,
    },
    /// Rebuild metric tables from a predictions file.
    Report {
        #[arg(long)]
        predictions: PathBuf,
        /// Transition log for the action histogram.
        #[arg(long)]
        transitions: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        k: f64,
        #[arg(long, default_value_t = 15)]
        bins: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Replay the shipped worked example.
    Verify {
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Run the full experiment described by a config file.
    Run {
        #[command(flatten)]
        overrides: Overrides,
    },
}

/// Keys that override the config file.
#[derive(Args, Clone)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    valuation: Option<u32>,
    #[arg(long)]
    workers: Option<usize>,
}

impl Overrides {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(v) = self.valuation {
            cfg.split.valuation = Some(v);
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct StageArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Seed to run; the first configured seed when absent.
    #[arg(long)]
    seed: Option<u64>,
}

impl StageArgs {
    fn load(&self) -> Result<(RunConfig, u64, PathBuf)> {
        let cfg = self.overrides.load()?;
        let seed = self.seed.unwrap_or(cfg.seeds[0]);
        let dir = pipeline::seed_dir(&cfg.output_dir, seed);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok((cfg, seed, dir))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_reports(dir: &Path, reports: &[(String, eval::MetricsReport)]) -> Result<()> {
    let named: Vec<(&str, &eval::MetricsReport)> = reports.iter().map(|(n, m)| (n.as_str(), m)).collect();
    let path = dir.join("metrics.csv");
    eval::write_metrics_csv(&named, create(&path)?)?;
    for (name, m) in reports {
        println!("{name}: relative OCL {}", m.relative_ocl.map_or("n/a".into(), |r| format!("{r:.4}")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            preset,
            seed,
            claims_per_period,
            schema,
            out,
        } => {
            let mut cfg = sim::preset(&preset)?;
            cfg.seed = seed;
            if let Some(n) = claims_per_period {
                cfg.mean_claims_per_period = n;
            }
            let ds = sim::simulate_portfolio(&cfg)?;
            match schema {
                Schema::Splice => ds.write_transactions_csv(create(&out)?)?,
                Schema::Cas => ds.write_cas_csv(create(&out)?)?,
            }
            info!("simulated {} claims", ds.len());
            println!("{} claims written to {}", ds.len(), out.display());
        }
        Command::Ingest {
            input,
            schema,
            period_unit,
            out,
        } => {
            let ds = load_transactions(&input, schema, period_unit)?;
            ds.write_dev_records_csv(create(&out)?)?;
            println!(
                "{} claims ingested ({} zero-loss and {} unsettled dropped)",
                ds.len(),
                ds.stats.dropped_zero_loss,
                ds.stats.dropped_unsettled
            );
        }
        Command::TrainRl(args) => {
            let (cfg, seed, dir) = args.load()?;
            let p = prepare_data(&cfg, seed)?;
            let mut sac = cfg.sac.clone();
            sac.seed = job_seed(seed, "rl", 0);
            let fit = fit_rl(&p.train, &p.init, &p.env(&cfg.env), &sac)?;
            write_text(&dir.join("rl_policy.json"), &fit.policy.to_json()?)?;
            write_transition_log(&fit.rollout, create(&dir.join("transitions.csv"))?)?;
            write_train_log(&fit.log, create(&dir.join("train_log.csv"))?)?;
            println!("policy written to {}", dir.join("rl_policy.json").display());
        }
        Command::TrainFnn(args) => {
            let (cfg, seed, dir) = args.load()?;
            let p = prepare_data(&cfg, seed)?;
            let fnn = p.fnn(&cfg.fnn);
            let (rows, s) = build_training_rows(&p.train, p.valuation, &fnn)?;
            let out = train_fnn(&rows, s, &fnn, job_seed(seed, "fnn", 0))?;
            write_text(&dir.join("fnn_model.json"), &out.model.to_json()?)?;
            println!("trained for {} epochs; model written to {}", out.epochs, dir.join("fnn_model.json").display());
        }
        Command::ChainLadder(args) => {
            let (cfg, seed, dir) = args.load()?;
            let p = prepare_data(&cfg, seed)?;
            let cl = run_chain_ladder(&p.train, p.valuation, &cfg.chain_ladder)?;
            cl.write_csv(create(&dir.join("chain_ladder.csv"))?)?;
            println!("total RBNS OCL {:.2} ({} accident periods clamped)", cl.total_rbns_ocl, cl.clamped);
        }
        Command::Tune(args) => {
            let (cfg, seed, dir) = args.load()?;
            let p = prepare_data(&cfg, seed)?;
            let folds = rsv_folds(&p.train, cfg.split.folds)?;
            let mut rows = Vec::new();
            if !cfg.tuning.rl.is_empty() {
                let (best, r) = pipeline::tune_rl(
                    &p.train,
                    &folds,
                    &cfg.tuning.rl,
                    &p.env(&cfg.env),
                    &cfg.sac,
                    cfg.weight_scale,
                    seed,
                )?;
                println!("rl: {best:?}");
                rows.extend(r);
            }
            if !cfg.tuning.fnn.is_empty() {
                let (best, r) = pipeline::tune_fnn(&p.train, &folds, &cfg.tuning.fnn, &p.fnn(&cfg.fnn), seed)?;
                println!("fnn: {best:?}");
                rows.extend(r);
            }
            if rows.is_empty() {
                return Err(Error::Config("no tuning grid configured".into()));
            }
            pipeline::write_tuning_csv(&rows, create(&dir.join("tuning.csv"))?)?;
        }
        Command::Evaluate {
            stage,
            policy,
            fnn_model,
        } => {
            let (cfg, seed, dir) = stage.load()?;
            let p = prepare_data(&cfg, seed)?;
            let mut reports = Vec::new();
            if let Some(path) = policy {
                let mut pol = TrainedPolicy::from_json(&read_text(&path)?)?;
                let out = rollout_calendar(&p.train, &mut pol, &p.init, &p.env(&cfg.env), false)?;
                let preds: Vec<(u64, f64)> = out
                    .predictions
                    .iter()
                    .filter(|x| x.calendar_period == p.valuation)
                    .map(|x| (x.claim_no, x.pred_ocl))
                    .collect();
                reports.push(("rl".to_string(), metrics_report(&p.records(&preds)?)));
            }
            if let Some(path) = fnn_model {
                let model = FnnModel::from_json(&read_text(&path)?)?;
                let preds = predict_ocl_fnn(&model, &p.train, p.valuation)?;
                reports.push(("fnn".to_string(), metrics_report(&p.records(&preds)?)));
            }
            let cl = run_chain_ladder(&p.train, p.valuation, &cfg.chain_ladder)?;
            let zero: Vec<(u64, f64)> = p.test_claims.iter().map(|c| (*c, 0.0)).collect();
            reports.push(("chain_ladder".to_string(), chain_ladder_report(&cl, &p.records(&zero)?)));
            write_reports(&dir, &reports)?;
        }
        Command::Report {
            predictions,
            transitions,
            k,
            bins,
            out_dir,
        } => {
            fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
            let reports = read_prediction_reports(&predictions)?;
            write_reports(&out_dir, &reports)?;
            if let Some(path) = transitions {
                let actions = read_transition_actions(fs::File::open(&path).map_err(|e| io_err(&path, e))?)?;
                let h = action_histogram(&actions, bins, k, true)?;
                eval::write_histogram_csv(&h, create(&out_dir.join("action_histogram.csv"))?)?;
            }
        }
        Command::Verify { fixtures } => {
            let dir = fixtures.unwrap_or_else(default_fixture_dir);
            let report = verify_worked_example(&dir)?;
            for c in report.failures() {
                println!("{c}");
            }
            if !report.passed() {
                let n = report.failures().count();
                return Err(Error::Invariant(format!("{n} worked-example checks failed")));
            }
            println!("worked example: {} checks passed", report.checks.len());
        }
        Command::Run { overrides } => {
            let cfg = overrides.load()?;
            let (manifest, runs) = pipeline::run_pipeline(&cfg)?;
            for run in &runs {
                for row in run.summary() {
                    println!(
                        "seed {} {}: relative OCL {}",
                        row.seed,
                        row.model,
                        row.relative_ocl.map_or("n/a".into(), |r| format!("{r:.4}"))
                    );
                }
            }
            println!("{} files listed in {}", manifest.files.len(), cfg.output_dir.join(pipeline::MANIFEST_FILE).display());
        }
    }
    Ok(())
}

fn read_prediction_reports(path: &Path) -> Result<Vec<(String, eval::MetricsReport)>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    Ok(pipeline::read_predictions(file)?
        .into_iter()
        .map(|(m, r)| (m, metrics_report(&r)))
        .collect())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
