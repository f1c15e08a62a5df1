
use reserve_core::chain_ladder::{
    cl_ultimates, fit_delay_scaling, ibnr_strip, run_chain_ladder, DelayScaling, SmootherConfig,
};
use reserve_core::claims::{Triangle, TriangleKind};
use reserve_core::sim;

fn triangles() -> (Triangle, Triangle) {
    let paid = Triangle::from_rows(
        TriangleKind::CumPaid,
        vec![vec![100.0, 150.0, 165.0], vec![110.0, 165.0], vec![120.0]],
    )
    .unwrap();
    let counts = Triangle::from_rows(
        TriangleKind::CumCount,
        vec![vec![10.0, 12.0, 12.0], vec![11.0, 13.0], vec![9.0]],
    )
    .unwrap();
    (paid, counts)
}

#[test]
fn hand_triangle_develops_to_ultimate() {
    let (paid, counts) = triangles();
    let u = cl_ultimates(&paid, &counts).unwrap();
    close(u.paid_ratios[0], 1.5, 1e-12);
    close(u.paid_ratios[1], 1.1, 1e-12);
    close(u.paid_ult[0], 165.0, 1e-9);
    close(u.paid_ult[1], 181.5, 1e-9);
    close(u.paid_ult[2], 198.0, 1e-9);
    close(u.count_ult[2], 9.0 * 25.0 / 21.0, 1e-9);
    close(u.mu[2], 18.48, 1e-9);
}

#[test]
fn ibnr_prices_projected_late_reports() {
    let (paid, counts) = triangles();
    let u = cl_ultimates(&paid, &counts).unwrap();
    let flat = ibnr_strip(&counts, &u.count_ratios, &u.mu, &DelayScaling::flat());
    assert_eq!(flat[0], 0.0);
    close(flat[1], 0.0, 1e-12);
    close(flat[2], 36.0 / 21.0 * 18.48, 1e-9);

    let doubled = DelayScaling {
        values: vec![1.0, 2.0],
        lambda: 0.0,
    };
    let scaled = ibnr_strip(&counts, &u.count_ratios, &u.mu, &doubled);
    close(scaled[2], 2.0 * flat[2], 1e-9);
}

#[test]
fn mismatched_triangles_are_rejected() {
    let (paid, _) = triangles();
    let counts = Triangle::from_rows(TriangleKind::CumCount, vec![vec![1.0, 2.0], vec![1.0]]).unwrap();
    assert!(cl_ultimates(&paid, &counts).is_err());
}

#[test]
fn smoother_reproduces_linear_means_and_normalises() {
    let obs: Vec<(u32, f64)> = (0..6u32)
        .flat_map(|d| (0..5).map(move |k| (d, 100.0 * (d + 1) as f64 + (k as f64 - 2.0))))
        .collect();
    let s = fit_delay_scaling(&obs, &SmootherConfig::default()).unwrap();
    assert_eq!(s.at(0), 1.0);
    for d in 0..6u32 {
        close(s.at(d), (d + 1) as f64, 1e-6);
    }
    assert_eq!(s.at(50), s.at(5));
}

#[test]
fn monotone_smoother_never_decreases() {
    let obs = vec![(0, 10.0), (1, 30.0), (2, 20.0), (3, 25.0), (4, 15.0), (5, 40.0)];
    let s = fit_delay_scaling(
        &obs,
        &SmootherConfig {
            lambdas: vec![0.01],
            monotone: true,
        },
    )
    .unwrap();
    assert!(s.values.windows(2).all(|w| w[0] <= w[1] + 1e-12), "{:?}", s.values);
}

#[test]
fn single_delay_gives_flat_scaling() {
    let s = fit_delay_scaling(&[(2, 5.0), (2, 7.0)], &SmootherConfig::default()).unwrap();
    assert!(s.values.iter().all(|v| *v == 1.0));
    assert!(fit_delay_scaling(&[], &SmootherConfig::default()).is_err());
}

#[test]
fn simulated_portfolio_rows_are_consistent() {
    let mut cfg = sim::preset("complexity1").unwrap();
    cfg.n_accident_periods = 16;
    cfg.mean_claims_per_period = 40.0;
    cfg.seed = 5;
    let ds = sim::simulate_portfolio(&cfg).unwrap();
    let r = run_chain_ladder(&ds, 16, &SmootherConfig::default()).unwrap();
    assert_eq!(r.rows.len(), 16);
    let mut total = 0.0;
    for row in &r.rows {
        assert!(row.rbns_ocl >= 0.0);
        close(
            row.rbns_ocl_raw,
            row.ultimate - row.ibnr - row.settled_ultimate - row.open_paid, 1e-6
        );
        assert_eq!(row.rbns_ocl, row.rbns_ocl_raw.max(0.0));
        total += row.rbns_ocl;
    }
    close(total, r.total_rbns_ocl, 1e-6);
    assert_eq!(r.clamped, r.rows.iter().filter(|row| row.rbns_ocl_raw < 0.0).count());
    // Oldest accident period is fully developed: no IBNR.
    assert_eq!(r.rows[0].ibnr, 0.0);

    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 17);
}

#[track_caller]
fn close(a: f64, b: f64, eps: f64) {
    assert!((a - b).abs() <= eps, "{a} vs {b}");
}
