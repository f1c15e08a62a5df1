use std::fs;
use std::path::Path;

use reserve_core::golden::{default_fixture_dir, verify_worked_example, EXPECTED_FILE, TRANSACTIONS_FILE};

fn copy_with(edit: impl Fn(&str) -> String) -> tempfile::TempDir {
    let src = default_fixture_dir();
    let dir = tempfile::tempdir().unwrap();
    fs::copy(src.join(TRANSACTIONS_FILE), dir.path().join(TRANSACTIONS_FILE)).unwrap();
    let table = fs::read_to_string(src.join(EXPECTED_FILE)).unwrap();
    fs::write(dir.path().join(EXPECTED_FILE), edit(&table)).unwrap();
    dir
}

fn edit_row(table: &str, dp: u32, column: &str, f: impl Fn(f64) -> f64) -> String {
    let mut lines = table.lines();
    let header = lines.next().unwrap();
    let col = header.split(',').position(|h| h == column).unwrap();
    let mut out = vec![header.to_string()];
    for line in lines {
        let mut cells: Vec<String> = line.split(',').map(str::to_string).collect();
        if cells[0] == dp.to_string() {
            cells[col] = f(cells[col].parse().unwrap()).to_string();
        }
        out.push(cells.join(","));
    }
    out.join("\n") + "\n"
}

fn failing_dps(dir: &Path) -> Vec<(Option<u32>, String)> {
    verify_worked_example(dir)
        .unwrap()
        .failures()
        .map(|c| (c.dp, c.component.clone()))
        .collect()
}

#[test]
fn unmodified_copy_passes() {
    let dir = copy_with(str::to_string);
    let report = verify_worked_example(dir.path()).unwrap();
    assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
}

#[test]
fn perturbed_stability_entry_names_its_period() {
    let dir = copy_with(|t| edit_row(t, 4, "r_stab", |v| v + 1e-2));
    let fails = failing_dps(dir.path());
    assert_eq!(fails.len(), 1, "{fails:?}");
    assert_eq!(fails[0].0, Some(4));
    assert!(fails[0].1.contains("stab"), "{fails:?}");
}

#[test]
fn perturbed_action_is_caught() {
    let dir = copy_with(|t| edit_row(t, 6, "action", |v| v + 1e-2));
    let fails = failing_dps(dir.path());
    assert!(!fails.is_empty());
    assert!(fails.iter().all(|f| f.0 == Some(6)), "{fails:?}");
}

#[test]
fn failure_lines_are_readable() {
    let dir = copy_with(|t| edit_row(t, 4, "r_stab", |v| v + 1e-2));
    let report = verify_worked_example(dir.path()).unwrap();
    let line = report.failures().next().unwrap().to_string();
    assert!(line.starts_with("FAIL DP 4"), "{line}");
}
