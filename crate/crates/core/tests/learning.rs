use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reserve_core::env::FeatureKind;
use reserve_core::nn::{Activation, Adam, FeatureScaler, Mlp};
use reserve_core::sac::{log_prob, sample_action, SacAgent, SacConfig, Stored};

fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    // Composite Simpson.
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let x = lo + h * i as f64;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

#[test]
fn squashed_density_integrates_to_one() {
    let l = 2f64.ln();
    for (mean, log_std) in [(0.0, 0.0), (0.7, -1.0), (-1.5, 0.5), (0.2, -2.5)] {
        let eps = 1e-9;
        let total = integrate(
            |a: f64| {
                let u = (a / l).atanh();
                log_prob(mean, log_std, u, l).exp()
            },
            -l + eps,
            l - eps,
            200_000,
        );
        assert!((total - 1.0).abs() < 1e-3, "mean {mean}, log_std {log_std}: {total}");
    }
}

#[test]
fn sampled_actions_match_the_squashed_mean() {
    let l = 2f64.ln();
    let mut net = Mlp::zeros(&[1, 2], &[Activation::Identity]).unwrap();
    let (mean, log_std) = (0.4, -0.3);
    net.set_layer(0, &[0.0, 0.0], &[mean, log_std]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 200_000;
    let mc: f64 = (0..n)
        .map(|_| sample_action(&net, &[0.0], l, false, &mut rng).unwrap().action)
        .sum::<f64>()
        / n as f64;
    let sd = log_std.exp();
    let exact = integrate(
        |z: f64| l * (mean + sd * z).tanh() * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt(),
        -10.0,
        10.0,
        20_000,
    );
    assert!((mc - exact).abs() < 3e-3, "{mc} vs {exact}");
}

#[test]
fn adam_is_deterministic_and_descends() {
    let run = || {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..500 {
            let g = vec![2.0 * p[0], 8.0 * p[1]];
            opt.step(&mut p, &g).unwrap();
        }
        p
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.iter().all(|v| v.abs() < 0.05), "{a:?}");
}

fn bandit_agent(seed: u64) -> SacAgent {
    let cfg = SacConfig {
        hidden: vec![16, 16],
        batch_size: 64,
        actor_lr: 3e-3,
        critic_lr: 3e-3,
        alpha_lr: 3e-3,
        init_alpha: 0.01,
        seed,
        ..SacConfig::default()
    };
    let mut agent = SacAgent::new(FeatureScaler::identity(vec![FeatureKind::Plain]), 2.0, cfg).unwrap();
    let l = 2f64.ln();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..512 {
        let a: f64 = rng.random_range(-l..l);
        agent.buffer.push(Stored {
            state: vec![1.0],
            action: a,
            reward: -(a - 0.3).powi(2) * 10.0,
            next_state: None,
        });
    }
    agent
}

#[test]
fn sac_updates_are_reproducible() {
    let mut a = bandit_agent(4);
    let mut b = bandit_agent(4);
    for _ in 0..20 {
        a.update().unwrap();
        b.update().unwrap();
    }
    assert_eq!(a.actor.params(), b.actor.params());
    assert_eq!(a.critic1.params(), b.critic1.params());
    assert_eq!(a.target2.params(), b.target2.params());
    assert_eq!(a.alpha(), b.alpha());
}

#[test]
fn sac_finds_the_bandit_optimum() {
    let mut agent = bandit_agent(9);
    for _ in 0..3000 {
        agent.update().unwrap();
    }
    let a = agent.act_scaled(&[1.0], true).unwrap().action;
    assert!((a - 0.3).abs() < 0.05, "deterministic action {a}");
}

#[test]
fn targets_trail_the_critics() {
    let mut agent = bandit_agent(2);
    let before = agent.target1.params().to_vec();
    agent.update().unwrap();
    let rho = agent.config().rho;
    // One Polyak step from identical nets moves the target by (1 - rho) of the critic's change.
    let moved: f64 = agent.target1.params().iter().zip(&before).map(|(t, b)| (t - b).abs()).sum();
    let critic_moved: f64 = agent.critic1.params().iter().zip(&before).map(|(c, b)| (c - b).abs()).sum();
    assert!((moved - (1.0 - rho) * critic_moved).abs() < 1e-9 * critic_moved.max(1.0));
}

proptest! {
    #[test]
    fn scaler_round_trips(rows in prop::collection::vec((0f64..1e6, -50f64..50.0), 2..40), probe in (0f64..1e6, -50f64..50.0)) {
        let data: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1]).collect();
        let s = FeatureScaler::fit(vec![FeatureKind::Currency, FeatureKind::Plain], data.iter().map(Vec::as_slice)).unwrap();
        let x = [probe.0, probe.1];
        let back = s.inverse(&s.transform(&x));
        prop_assert!((back[0] - x[0]).abs() <= 1e-6 * x[0].max(1.0));
        prop_assert!((back[1] - x[1]).abs() <= 1e-9 * x[1].abs().max(1.0));
    }

    #[test]
    fn polyak_is_a_convex_blend(seed in 0u64..500, rho in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Mlp::new(&[3, 4, 1], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        let b = Mlp::new(&[3, 4, 1], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        let mut t = a.clone();
        t.polyak_from(&b, rho);
        for ((x, y), z) in a.params().iter().zip(b.params()).zip(t.params()) {
            prop_assert!((z - (rho * x + (1.0 - rho) * y)).abs() < 1e-12);
        }
    }
}
