use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn reserve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reserve")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, preset: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        format!(
            "output_dir = {:?}\nseeds = [3]\n[data]\nsource = \"simulate\"\npreset = {preset:?}\n\
             claims_per_period = 20.0\nn_accident_periods = 10\n[split]\nvaluation = 10\n\
             [sac]\nhidden = [8, 8]\nbatch_size = 32\nupdates_per_step = 2\n[fnn]\nmax_epochs = 3\n",
            dir.join("out")
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn verify_passes_on_shipped_fixtures() {
    let o = reserve(&["verify"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("checks passed"));
}

#[test]
fn verify_without_fixtures_fails_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = reserve(&["verify", "--fixtures", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn usage_and_config_errors_exit_one() {
    assert_eq!(code(&reserve(&["no-such-command"])), 1);
    assert_eq!(code(&reserve(&["--help"])), 0);
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "complexity7");
    let o = reserve(&["run", "--config", &cfg]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("complexity7"));
    let cfg = write_config(dir.path(), "complexity1");
    assert_eq!(code(&reserve(&["run", "--config", &cfg, "--workers", "0"])), 1);
}

#[test]
fn simulate_then_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let txns = dir.path().join("txns.csv");
    let o = reserve(&["simulate", "--seed", "2", "--claims-per-period", "5", "--out", txns.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(&txns).unwrap().lines().count() > 10);

    let dev = dir.path().join("dev.csv");
    let o = reserve(&["ingest", "--input", txns.to_str().unwrap(), "--out", dev.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("claims ingested"));
    assert!(dev.is_file());
}

#[test]
fn run_then_report_and_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "complexity1");
    let o = reserve(&["run", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    assert!(out.join("manifest.json").is_file());
    let seed = out.join("seed_3");

    let rep = dir.path().join("report");
    let o = reserve(&[
        "report",
        "--predictions",
        seed.join("predictions.csv").to_str().unwrap(),
        "--transitions",
        seed.join("transitions.csv").to_str().unwrap(),
        "--out-dir",
        rep.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("rl: relative OCL"));
    assert!(rep.join("action_histogram.csv").is_file());
    // Rebuilt metrics agree with the pipeline's own for the learned models.
    let original = fs::read_to_string(seed.join("metrics.csv")).unwrap();
    let rebuilt = fs::read_to_string(rep.join("metrics.csv")).unwrap();
    for line in rebuilt.lines().filter(|l| l.starts_with("rl,") || l.starts_with("fnn,")) {
        assert!(original.contains(line), "{line}");
    }

    let o = reserve(&["evaluate", "--config", &cfg, "--policy", seed.join("rl_policy.json").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rl_line = stdout(&o).lines().find(|l| l.starts_with("rl:")).unwrap().to_string();
    assert!(stdout(&reserve(&["run", "--config", &cfg])).contains(&format!(
        "seed 3 rl: relative OCL {}",
        rl_line.trim_start_matches("rl: relative OCL ")
    )));

    let o = reserve(&["chain-ladder", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("total RBNS OCL"));
}
