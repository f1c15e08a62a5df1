use proptest::prelude::*;

use reserve_core::claims::{read_transactions, PeriodUnit, Schema};
use reserve_core::eval::{split, SplitKind, SplitSpec};
use reserve_core::sim::{preset, simulate_portfolio};

fn small(seed: u64) -> reserve_core::claims::Dataset {
    let mut cfg = preset("complexity1").unwrap();
    cfg.mean_claims_per_period = 8.0;
    cfg.n_accident_periods = 12;
    cfg.seed = seed;
    simulate_portfolio(&cfg).unwrap()
}

#[test]
fn splice_csv_round_trips() {
    let ds = small(3);
    let mut buf = Vec::new();
    ds.write_transactions_csv(&mut buf).unwrap();
    let back = read_transactions(buf.as_slice(), Schema::Splice, PeriodUnit::Quarter).unwrap();
    assert_eq!(back.claims.len(), ds.claims.len());
    for (a, b) in ds.claims.iter().zip(&back.claims) {
        assert_eq!(a.dev_records, b.dev_records);
        assert_eq!(a.settlement_period, b.settlement_period);
    }
}

#[test]
fn cas_export_keeps_paid_history_and_drops_case() {
    let ds = small(4);
    let mut buf = Vec::new();
    ds.write_cas_csv(&mut buf).unwrap();
    let back = read_transactions(buf.as_slice(), Schema::Cas, PeriodUnit::Quarter).unwrap();
    assert_eq!(back.claims.len(), ds.claims.len());
    assert_eq!(back.stats.dropped_unsettled, 0);
    for (a, b) in ds.claims.iter().zip(&back.claims) {
        let pa: Vec<f64> = a.dev_records.iter().map(|r| r.cum_paid).collect();
        let pb: Vec<f64> = b.dev_records.iter().map(|r| r.cum_paid).collect();
        assert_eq!(pa, pb);
        assert!(b.dev_records.iter().all(|r| r.case.is_none()));
    }
}

#[test]
fn temporal_split_cuts_developments_at_the_boundary() {
    let csv = "claim_no,claim_size,txn_time,txn_type,incurred,OCL,cumpaid,accident_period
1,90,35.2,Ma,90,90,0,35
1,90,38.5,P,90,60,30,35
1,90,44.5,P,90,30,60,35
1,90,49.5,P,90,0,90,35
";
    let ds = read_transactions(csv.as_bytes(), Schema::Splice, PeriodUnit::Quarter).unwrap();
    assert_eq!(ds.claims[0].settlement_period, Some(50));
    let s = split(&ds, &SplitSpec::new(SplitKind::Ts, 40)).unwrap();
    let c = &s.train.claims[0];
    assert_eq!(c.dev_records.last().unwrap().calendar_period, 40);
    assert_eq!(c.settlement_period, None);
    assert_eq!(s.test_claims, vec![1]);
    let csc = split(&ds, &SplitSpec::new(SplitKind::Csc, 40)).unwrap();
    assert!(csc.train.is_empty());
    let csc = split(&ds, &SplitSpec::new(SplitKind::Csc, 50)).unwrap();
    assert_eq!(csc.train.len(), 1);
}

#[test]
fn boundary_outside_horizon_is_rejected() {
    let ds = small(1);
    let b = ds.max_calendar_period + 1;
    assert!(split(&ds, &SplitSpec::new(SplitKind::Ts, b)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn truncation_is_consistent(seed in 0u64..1000, b in 5u32..30) {
        let ds = small(seed);
        let t = ds.truncate_at(b);
        prop_assert_eq!(t.max_calendar_period, b);
        for c in &t.claims {
            prop_assert!(c.notification_period <= b);
            prop_assert!(c.dev_records.iter().all(|r| r.calendar_period <= b));
            prop_assert!(c.transactions.iter().all(|x| x.period() <= b));
            let orig = ds.claim(c.claim_no).unwrap();
            prop_assert_eq!(c.settlement_period.is_some(), orig.is_settled_by(b));
            prop_assert_eq!(c.paid_at_calendar(b), orig.paid_at_calendar(b));
        }
        // Truncating twice is the same as truncating once.
        prop_assert_eq!(t.truncate_at(b), t.clone());
    }

    #[test]
    fn records_follow_the_calendar(seed in 0u64..1000) {
        let ds = small(seed);
        for c in &ds.claims {
            for w in c.dev_records.windows(2) {
                prop_assert_eq!(w[1].dev_period, w[0].dev_period + 1);
                prop_assert!(w[1].cum_paid >= w[0].cum_paid);
                prop_assert!(w[1].n_pay >= w[0].n_pay);
            }
            for r in &c.dev_records {
                prop_assert_eq!(r.calendar_period, c.accident_period + r.dev_period - 1);
                if let (Some(o), Some(u)) = (r.true_ocl, c.ultimate()) {
                    prop_assert!((o - (u - r.cum_paid)).abs() <= 1e-9 * u.max(1.0));
                }
            }
            prop_assert_eq!(c.repdel, c.notification_period - c.accident_period);
        }
    }
}
