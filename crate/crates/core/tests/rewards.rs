use proptest::prelude::*;

use reserve_core::env::{
    apply_action, reward_accuracy, reward_smoothing, reward_stability, smape_h, weight_open, weight_settled,
};

const GAMMA: f64 = 0.99;

#[test]
fn accuracy_of_a_perfect_path_is_c() {
    let ocl = [10.0, 8.0, 3.0];
    let r = reward_accuracy(&ocl, &ocl, GAMMA, 5.0, &[1.0; 3]).unwrap();
    assert!((r - 5.0).abs() < 1e-12);
}

#[test]
fn accuracy_discounting_by_hand() {
    // h = 1 at step 1, h(2, 1) = 1/3 at step 2.
    let r = reward_accuracy(&[1.0, 2.0], &[1.0, 1.0], 0.5, 1.0, &[1.0, 1.0]).unwrap();
    let expected = (1.0 + 0.5 / 3.0) / 1.5;
    assert!((r - expected).abs() < 1e-12);
}

#[test]
fn zero_weight_removes_a_step() {
    let a = reward_accuracy(&[1.0, 2.0], &[1.0, 1.0], 0.9, 1.0, &[1.0, 0.0]).unwrap();
    assert!((a - 1.0 / 1.9).abs() < 1e-12);
}

#[test]
fn misaligned_paths_are_rejected() {
    assert!(reward_accuracy(&[1.0, 2.0], &[1.0], GAMMA, 5.0, &[1.0, 1.0]).is_err());
}

#[test]
fn first_step_stability_penalises_the_action() {
    let ln2 = 2f64.ln();
    let r = reward_stability(1, &[5.0, 6.0], ln2, false, GAMMA, 2.0, 5).unwrap();
    assert!((r + 1.0).abs() < 1e-12);
    assert_eq!(reward_stability(1, &[5.0, 6.0], ln2, true, GAMMA, 2.0, 5).unwrap(), 0.0);
}

#[test]
fn stability_is_undefined_at_settlement() {
    assert!(reward_stability(5, &[1.0; 6], 0.0, false, GAMMA, 2.0, 5).is_err());
}

#[test]
fn smoothing_ramp_saturates() {
    let a = 0.2;
    let full = reward_smoothing(a, 20, 10, 2.0, false);
    assert!((reward_smoothing(a, 9, 10, 2.0, false) - full).abs() < 1e-15);
    assert!((reward_smoothing(a, 0, 10, 2.0, false) - full / 10.0).abs() < 1e-15);
}

#[test]
fn open_claim_weight_uses_larger_of_paid_and_initial_ultimate() {
    let w = weight_open(100.0, 20.0, 150.0, 1.0, 10.0).unwrap();
    assert!((w - 13.0).abs() < 1e-12);
    let w = weight_open(100.0, 20.0, 50.0, 1.0, 10.0).unwrap();
    assert!((w - 8.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn h_is_symmetric_and_bounded(y in -1e6f64..1e6, yhat in -1e6f64..1e6) {
        let a = smape_h(y, yhat);
        prop_assert!((a - smape_h(yhat, y)).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn h_is_one_on_the_diagonal(y in 0f64..1e7) {
        prop_assert!((smape_h(y, y) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn h_drops_as_prediction_moves_away(y in 1f64..1e6, r1 in 1f64..5.0, dr in 0.01f64..5.0) {
        prop_assert!(smape_h(y, y * r1) > smape_h(y, y * (r1 + dr)));
    }

    #[test]
    fn actions_move_within_the_band(prev in 1e-3f64..1e7, a in -10f64..10.0, k in 1.1f64..5.0) {
        let next = apply_action(prev, a, k).unwrap();
        let ratio = next / prev;
        prop_assert!(ratio >= 1.0 / k * (1.0 - 1e-12) && ratio <= k * (1.0 + 1e-12));
    }

    #[test]
    fn payment_periods_are_always_gated(
        ul in prop::collection::vec(1f64..1e6, 3..12),
        a in -1f64..1.0,
        m in 0u32..30,
    ) {
        let t_final = ul.len() as u32;
        for tau in 1..t_final {
            prop_assert_eq!(reward_stability(tau, &ul, a, true, GAMMA, 2.0, t_final).unwrap(), 0.0);
        }
        prop_assert_eq!(reward_smoothing(a, m, 10, 2.0, true), 0.0);
        prop_assert!(reward_smoothing(a, m, 10, 2.0, false) <= 0.0);
    }

    #[test]
    fn shaping_telescopes(ul in prop::collection::vec(1f64..1e6, 3..30), gamma in 0.3f64..1.0) {
        let t_final = ul.len() as u32;
        let mut sum = 0.0;
        let mut disc = 1.0;
        for tau in 2..t_final {
            sum += disc * reward_stability(tau, &ul, 0.0, false, gamma, 2.0, t_final).unwrap();
            disc *= gamma;
        }
        prop_assert!((sum + smape_h(ul[1], ul[0])).abs() < 1e-10);
    }

    #[test]
    fn settled_weight_is_monotone(o1 in 0f64..1e6, d in 0f64..1e6, alpha in 0.01f64..2.0, s in 1f64..1e5) {
        prop_assert!(weight_settled(o1 + d, alpha, s).unwrap() >= weight_settled(o1, alpha, s).unwrap());
    }

    #[test]
    fn zero_alpha_weight_is_one_for_positive_ocl(o in 1e-6f64..1e6, s in 1f64..1e5) {
        prop_assert_eq!(weight_settled(o, 0.0, s).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_never_exceeds_c(
        pairs in prop::collection::vec((0f64..1e5, 0f64..1e5, 0f64..3.0), 1..15),
        c in 0.1f64..10.0,
    ) {
        let ocl: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let w: Vec<f64> = pairs.iter().map(|p| p.2.min(1.0)).collect();
        let r = reward_accuracy(&ocl, &pred, GAMMA, c, &w).unwrap();
        prop_assert!(r <= c + 1e-9);
    }
}
