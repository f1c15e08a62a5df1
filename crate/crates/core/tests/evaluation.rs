use std::collections::BTreeMap;

use proptest::prelude::*;

use reserve_core::error::Error;
use reserve_core::eval::{
    metrics_report, overall_ratio, relative_ocl, rmse_per_claim, rsv_intervals, size_tercile_report, tune, EvalRecord,
    FoldScore, GroupBy,
};

fn rec(claim_no: u64, ap: u32, psn: u32, pred: f64, actual: f64, ultimate: f64) -> EvalRecord {
    EvalRecord {
        claim_no,
        accident_period: ap,
        psn,
        pred,
        actual,
        ultimate,
    }
}

#[test]
fn rsv_intervals_partition_the_horizon() {
    assert_eq!(rsv_intervals(40, 3).unwrap(), vec![(1, 13), (14, 26), (27, 40)]);
    assert_eq!(rsv_intervals(10, 2).unwrap(), vec![(1, 5), (6, 10)]);
    assert!(rsv_intervals(40, 1).is_err());
    assert!(rsv_intervals(2, 3).is_err());
}

#[test]
fn rmse_and_ratios_by_group() {
    let rs = vec![rec(1, 1, 1, 13.0, 10.0, 50.0), rec(2, 1, 2, 6.0, 10.0, 60.0), rec(3, 2, 1, 0.0, 0.0, 5.0)];
    close(rmse_per_claim(&rs, GroupBy::Ap)[&1], 5.0 / 2f64.sqrt(), 1e-12);
    close(overall_ratio(&rs).unwrap(), 0.95, 1e-12);
    let by_ap = relative_ocl(&rs, GroupBy::Ap);
    assert_eq!(by_ap[&2], None);
    close(relative_ocl(&rs, GroupBy::Psn)[&2].unwrap(), 0.6, 1e-12);
    let m = metrics_report(&rs);
    assert_eq!(m.n_claims, 3);
    assert_eq!(m.share_by_ap.last().unwrap().1, 1.0);
}

#[test]
fn terciles_send_ties_down() {
    let rs: Vec<EvalRecord> = (0..6)
        .map(|k| rec(k, 1, 1, 2.0 * (k + 1) as f64, (k + 1) as f64, [1.0, 1.0, 1.0, 2.0, 3.0, 9.0][k as usize]))
        .collect();
    // Cuts at the 2nd and 4th smallest ultimates (1.0 and 2.0): thirds hold 3, 1, 2 claims.
    let t = size_tercile_report(&rs);
    close(t[0].unwrap(), 2.0, 1e-12);
    assert!(t.iter().all(|v| v.is_some()));
    assert_eq!(size_tercile_report(&[]), [None; 3]);
}

fn score(ratio: f64, rmse: f64) -> reserve_core::error::Result<FoldScore> {
    Ok(FoldScore {
        ratio: Some(ratio),
        rmse,
    })
}

#[test]
fn tuning_orders_by_distance_then_rmse_then_index() {
    let folds = [0, 1];
    let table: BTreeMap<&str, [(f64, f64); 2]> = [
        ("far", [(1.5, 1.0), (0.5, 1.0)]),
        ("near_rough", [(1.1, 9.0), (0.9, 9.0)]),
        ("near_smooth", [(0.9, 3.0), (1.1, 3.0)]),
        ("near_smooth_twin", [(1.1, 3.0), (0.9, 3.0)]),
    ]
    .into_iter()
    .collect();
    let grid = ["far", "near_rough", "near_smooth_twin", "near_smooth"];
    let r = tune(&grid, &folds, |c, f| {
        let (ratio, rmse) = table[c][*f];
        score(ratio, rmse)
    })
    .unwrap();
    assert_eq!(r.best, "near_smooth_twin");
    assert_eq!(r.best_index, 2);
    close(r.scores[0].mean_distance.unwrap(), 0.5, 1e-12);
}

#[test]
fn failing_configurations_are_skipped() {
    let r = tune(&[0, 1], &[(), ()], |c, _| {
        if *c == 0 {
            Err(Error::Numeric("diverged".into()))
        } else {
            score(1.3, 1.0)
        }
    })
    .unwrap();
    assert_eq!(r.best_index, 1);
    assert!(r.scores[0].error.as_deref().unwrap().contains("diverged"));
    assert!(r.scores[0].mean_distance.is_none());

    let undefined = tune(&[0], &[()], |_, _| {
        Ok(FoldScore {
            ratio: None,
            rmse: 1.0,
        })
    });
    assert!(undefined.is_err());
    assert!(tune::<i32, _, ()>(&[], &[()], |_, _| score(1.0, 1.0)).is_err());
    assert!(tune::<i32, _, ()>(&[1], &[], |_, _| score(1.0, 1.0)).is_err());
}

fn records() -> impl Strategy<Value = Vec<EvalRecord>> {
    prop::collection::vec((1u32..6, 1u32..5, 0f64..1e5, 0.1f64..1e5, 1f64..1e6), 1..60).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(k, (ap, psn, p, a, u))| rec(k as u64, ap, psn, p, a, u))
            .collect()
    })
}

proptest! {
    #[test]
    fn group_ratios_recombine_to_overall(rs in records()) {
        let total_actual: f64 = rs.iter().map(|r| r.actual).sum();
        for by in [GroupBy::Ap, GroupBy::Psn] {
            let ratios = relative_ocl(&rs, by);
            let mut pred = 0.0;
            for (key, ratio) in ratios {
                let actual: f64 = rs.iter().filter(|r| match by {
                    GroupBy::Ap => r.accident_period == key,
                    _ => r.psn == key,
                }).map(|r| r.actual).sum();
                pred += ratio.unwrap() * actual;
            }
            prop_assert!((pred / total_actual - overall_ratio(&rs).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn share_curves_are_monotone_and_end_at_one(rs in records()) {
        for by in [GroupBy::Ap, GroupBy::Psn] {
            let c = reserve_core::eval::ocl_share_curve(&rs, by);
            prop_assert!(c.windows(2).all(|w| w[0].1 <= w[1].1 + 1e-12));
            prop_assert_eq!(c.last().unwrap().1, 1.0);
        }
    }

    #[test]
    fn tercile_counts_cover_everything(rs in records()) {
        let t = size_tercile_report(&rs);
        // Weighted by their true totals the thirds rebuild the overall ratio.
        let mut us: Vec<f64> = rs.iter().map(|r| r.ultimate).collect();
        us.sort_by(f64::total_cmp);
        let n = us.len();
        let (c1, c2) = (us[n.div_ceil(3) - 1], us[(2 * n).div_ceil(3) - 1]);
        let mut pred = 0.0;
        for (k, ratio) in t.iter().enumerate() {
            let actual: f64 = rs.iter().filter(|r| {
                let bucket = if r.ultimate <= c1 { 0 } else if r.ultimate <= c2 { 1 } else { 2 };
                bucket == k
            }).map(|r| r.actual).sum();
            if let Some(v) = ratio { pred += v * actual; }
        }
        let total: f64 = rs.iter().map(|r| r.actual).sum();
        prop_assert!((pred / total - overall_ratio(&rs).unwrap()).abs() < 1e-9);
    }
}

#[track_caller]
fn close(a: f64, b: f64, eps: f64) {
    assert!((a - b).abs() <= eps, "{a} vs {b}");
}
