//! Soft actor-critic with a tanh-squashed Gaussian policy scaled to
//! `[-ln K, ln K]`, twin critics with Polyak-averaged targets and automatic
//! entropy temperature.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::claims::Dataset;
use crate::env::{rollout_calendar, CalendarRollout, EnvConfig, Policy, StateVector, Transition, ZeroPolicy};
use crate::error::{Error, Result};
use crate::init::ClaimInitialiser;
use crate::nn::{Activation, Adam, FeatureScaler, Mlp};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: f64,
    /// Replay capacity; zero keeps every transition.
    pub capacity: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    /// Target smoothing: `target = rho * target + (1 - rho) * critic`.
    pub rho: f64,
    pub target_entropy: f64,
    pub auto_alpha: bool,
    pub init_alpha: f64,
    /// Gradient updates per calendar period.
    pub updates_per_step: usize,
    /// Leading calendar periods acted with uniform random actions.
    pub warmup_steps: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: 0.99,
            capacity: 0,
            batch_size: 256,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            rho: 0.995,
            target_entropy: -1.0,
            auto_alpha: true,
            init_alpha: 0.1,
            updates_per_step: 50,
            warmup_steps: 0,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.capacity != 0 && self.capacity < self.batch_size {
            return Err(Error::Config("capacity must be 0 (unbounded) or >= batch_size".into()));
        }
        if !(self.init_alpha > 0.0) {
            return Err(Error::Config("init_alpha must be > 0".into()));
        }
        for lr in [self.actor_lr, self.critic_lr, self.alpha_lr] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config("learning rates must be > 0".into()));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Transition with scaled states as stored for learning.
#[derive(Debug, Clone, PartialEq)]
pub struct Stored {
    pub state: Vec<f64>,
    pub action: f64,
    pub reward: f64,
    pub next_state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    items: Vec<Stored>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    /// `capacity == 0` means unbounded.
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: Vec::new(),
            capacity,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, s: Stored) {
        if self.capacity == 0 || self.items.len() < self.capacity {
            self.items.push(s);
        } else {
            self.items[self.cursor] = s;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Stored> {
        self.items.iter()
    }

    /// Uniform sample of distinct entries.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Stored> {
        let n = n.min(self.items.len());
        index::sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySample {
    pub action: f64,
    /// Absent in deterministic mode.
    pub log_prob: Option<f64>,
    pub mean: f64,
    pub log_std: f64,
    pub u: f64,
    pub eps: f64,
}

/// `log(1 - tanh(u)^2)` without cancellation.
pub fn log1m_tanh2(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Log-density of `a = ln_k * tanh(u)` with `u ~ N(mean, exp(log_std))`.
pub fn log_prob(mean: f64, log_std: f64, u: f64, ln_k: f64) -> f64 {
    let z = (u - mean) / log_std.exp();
    -0.5 * z * z - log_std - 0.5 * LN_2PI - ln_k.ln() - log1m_tanh2(u)
}

fn split_head(out: &[f64]) -> (f64, f64, bool) {
    let raw = out[1];
    let clamped = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
    (out[0], clamped, raw == clamped)
}

pub fn sample_action<R: Rng + ?Sized>(
    actor: &Mlp,
    state: &[f64],
    ln_k: f64,
    deterministic: bool,
    rng: &mut R,
) -> Result<PolicySample> {
    let out = actor.forward(state)?;
    sample_from_head(&out, ln_k, deterministic, rng)
}

fn sample_from_head<R: Rng + ?Sized>(out: &[f64], ln_k: f64, deterministic: bool, rng: &mut R) -> Result<PolicySample> {
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(format!("actor produced non-finite output {out:?}")));
    }
    let (mean, log_std, _) = split_head(out);
    if deterministic {
        return Ok(PolicySample {
            action: ln_k * mean.tanh(),
            log_prob: None,
            mean,
            log_std,
            u: mean,
            eps: 0.0,
        });
    }
    let eps: f64 = rng.sample(StandardNormal);
    let u = mean + log_std.exp() * eps;
    Ok(PolicySample {
        action: ln_k * u.tanh(),
        log_prob: Some(log_prob(mean, log_std, u, ln_k)),
        mean,
        log_std,
        u,
        eps,
    })
}

/// Soft Bellman target for one transition.
pub fn critic_target(reward: f64, done: bool, q1_next: f64, q2_next: f64, log_prob_next: f64, gamma: f64, alpha: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * (q1_next.min(q2_next) - alpha * log_prob_next)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub mean_log_prob: f64,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub scaler: FeatureScaler,
    pub buffer: ReplayBuffer,
    pub log_alpha: f64,
    pub ln_k: f64,
    cfg: SacConfig,
    opt_actor: Adam,
    opt_c1: Adam,
    opt_c2: Adam,
    opt_alpha: Adam,
    rng: ChaCha8Rng,
}

fn critic_input(state: &[f64], a: f64, ln_k: f64) -> Vec<f64> {
    let mut x = Vec::with_capacity(state.len() + 1);
    x.extend_from_slice(state);
    x.push(a / ln_k);
    x
}

impl SacAgent {
    pub fn new(scaler: FeatureScaler, k: f64, cfg: SacConfig) -> Result<Self> {
        cfg.validate()?;
        let dim = scaler.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let actor = Mlp::standard(dim, &cfg.hidden, 2, Activation::Relu, &mut rng)?;
        let critic1 = Mlp::standard(dim + 1, &cfg.hidden, 1, Activation::Relu, &mut rng)?;
        let critic2 = Mlp::standard(dim + 1, &cfg.hidden, 1, Activation::Relu, &mut rng)?;
        Ok(SacAgent {
            opt_actor: Adam::new(actor.n_params(), cfg.actor_lr),
            opt_c1: Adam::new(critic1.n_params(), cfg.critic_lr),
            opt_c2: Adam::new(critic2.n_params(), cfg.critic_lr),
            opt_alpha: Adam::new(1, cfg.alpha_lr),
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            scaler,
            buffer: ReplayBuffer::new(cfg.capacity),
            log_alpha: cfg.init_alpha.ln(),
            ln_k: k.ln(),
            cfg,
            rng,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn store(&mut self, t: &Transition) -> Result<()> {
        if t.action.abs() > self.ln_k {
            return Err(Error::Invariant(format!("action {} exceeds ln K", t.action)));
        }
        self.buffer.push(Stored {
            state: self.scaler.transform(&t.state),
            action: t.action,
            reward: t.reward,
            next_state: t.next_state.as_ref().map(|s| self.scaler.transform(s)),
        });
        Ok(())
    }

    pub fn act_scaled(&mut self, scaled: &[f64], deterministic: bool) -> Result<PolicySample> {
        sample_action(&self.actor, scaled, self.ln_k, deterministic, &mut self.rng)
    }

    /// One gradient step on a freshly sampled batch. Every gradient is
    /// computed before any parameter moves, so a numeric fault leaves the
    /// agent at its last good state.
    pub fn update(&mut self) -> Result<UpdateDiagnostics> {
        let b = self.cfg.batch_size;
        if self.buffer.len() < b {
            return Err(Error::Invariant(format!("buffer holds {} < batch {b}", self.buffer.len())));
        }
        let idx: Vec<usize> = index::sample(&mut self.rng, self.buffer.len(), b).into_vec();
        let batch: Vec<Stored> = idx.iter().map(|i| self.buffer.items[*i].clone()).collect();
        let diag = self.update_on(&batch)?;
        Ok(diag)
    }

    /// Gradient step on an explicit batch.
    pub fn update_on(&mut self, batch: &[Stored]) -> Result<UpdateDiagnostics> {
        let n = batch.len() as f64;
        let alpha = self.alpha();
        let gamma = self.cfg.gamma;
        let ln_k = self.ln_k;

        // Targets.
        let mut y = Vec::with_capacity(batch.len());
        for t in batch {
            let target = match &t.next_state {
                Some(s2) if !gamma.eq(&0.0) => {
                    let ps = sample_action(&self.actor, s2, ln_k, false, &mut self.rng)?;
                    let x2 = critic_input(s2, ps.action, ln_k);
                    let q1 = self.target1.forward(&x2)?[0];
                    let q2 = self.target2.forward(&x2)?[0];
                    critic_target(t.reward, false, q1, q2, ps.log_prob.expect("stochastic"), gamma, alpha)
                }
                _ => t.reward,
            };
            y.push(target);
        }

        // Critic gradients.
        let mut g1 = vec![0.0; self.critic1.n_params()];
        let mut g2 = vec![0.0; self.critic2.n_params()];
        let (mut l1, mut l2) = (0.0, 0.0);
        for (t, yt) in batch.iter().zip(&y) {
            let x = critic_input(&t.state, t.action, ln_k);
            let c1 = self.critic1.forward_cached(&x)?;
            let d1 = c1.output[0] - yt;
            l1 += d1 * d1 / n;
            self.critic1.backward(&c1, &[2.0 * d1 / n], &mut g1)?;
            let c2 = self.critic2.forward_cached(&x)?;
            let d2 = c2.output[0] - yt;
            l2 += d2 * d2 / n;
            self.critic2.backward(&c2, &[2.0 * d2 / n], &mut g2)?;
        }

        // Actor gradient through the current critics.
        let mut ga = vec![0.0; self.actor.n_params()];
        let mut scratch1 = vec![0.0; self.critic1.n_params()];
        let mut scratch2 = vec![0.0; self.critic2.n_params()];
        let mut actor_loss = 0.0;
        let mut sum_logp = 0.0;
        for t in batch {
            let cache = self.actor.forward_cached(&t.state)?;
            let ps = sample_from_head(&cache.output, ln_k, false, &mut self.rng)?;
            let logp = ps.log_prob.expect("stochastic");
            let x = critic_input(&t.state, ps.action, ln_k);
            let c1 = self.critic1.forward_cached(&x)?;
            let c2 = self.critic2.forward_cached(&x)?;
            let (qmin, dq_dx) = if c1.output[0] <= c2.output[0] {
                (c1.output[0], self.critic1.backward(&c1, &[1.0], &mut scratch1)?)
            } else {
                (c2.output[0], self.critic2.backward(&c2, &[1.0], &mut scratch2)?)
            };
            let dq_da = dq_dx[dq_dx.len() - 1] / ln_k;
            let th = ps.u.tanh();
            let da_du = ln_k * (1.0 - th * th);
            let dl_du = alpha * 2.0 * th - dq_da * da_du;
            let (_, _, ls_free) = split_head(&cache.output);
            let dl_dmean = dl_du / n;
            let dl_dls = if ls_free {
                (-alpha + dl_du * ps.log_std.exp() * ps.eps) / n
            } else {
                0.0
            };
            self.actor.backward(&cache, &[dl_dmean, dl_dls], &mut ga)?;
            actor_loss += (alpha * logp - qmin) / n;
            sum_logp += logp;
        }
        let mean_logp = sum_logp / n;
        let g_alpha = -(mean_logp + self.cfg.target_entropy);

        let finite = [l1, l2, actor_loss, g_alpha].iter().all(|v| v.is_finite())
            && g1.iter().chain(&g2).chain(&ga).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric(format!(
                "non-finite SAC loss (critic {l1}/{l2}, actor {actor_loss}); parameters left at last good state"
            )));
        }

        self.opt_c1.step(self.critic1.params_mut(), &g1)?;
        self.opt_c2.step(self.critic2.params_mut(), &g2)?;
        self.opt_actor.step(self.actor.params_mut(), &ga)?;
        if self.cfg.auto_alpha {
            let mut la = [self.log_alpha];
            self.opt_alpha.step(&mut la, &[g_alpha])?;
            self.log_alpha = la[0].clamp(-20.0, 5.0);
        }
        self.target1.polyak_from(&self.critic1, self.cfg.rho);
        self.target2.polyak_from(&self.critic2, self.cfg.rho);

        Ok(UpdateDiagnostics {
            critic1_loss: l1,
            critic2_loss: l2,
            actor_loss,
            alpha: self.alpha(),
            mean_log_prob: mean_logp,
        })
    }

    pub fn frozen_policy(&self) -> TrainedPolicy {
        TrainedPolicy {
            actor: self.actor.clone(),
            scaler: self.scaler.clone(),
            ln_k: self.ln_k,
            rng: ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x5eed),
        }
    }
}

/// Acting wrapper used while collecting experience.
struct Learner<'a> {
    agent: &'a mut SacAgent,
    random: bool,
}

impl Policy for Learner<'_> {
    fn act(&mut self, state: &StateVector, explore: bool) -> Result<f64> {
        if self.random {
            let l = self.agent.ln_k;
            return Ok(self.agent.rng.random_range(-l..=l));
        }
        let z = self.agent.scaler.transform(&state.values);
        Ok(self.agent.act_scaled(&z, !explore)?.action)
    }
}

/// A trained actor with its feature scaler. Acts deterministically unless
/// asked to explore.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub actor: Mlp,
    pub scaler: FeatureScaler,
    pub ln_k: f64,
    #[serde(skip, default = "default_rng")]
    rng: ChaCha8Rng,
}

fn default_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

impl TrainedPolicy {
    pub fn new(actor: Mlp, scaler: FeatureScaler, ln_k: f64) -> Self {
        TrainedPolicy {
            actor,
            scaler,
            ln_k,
            rng: default_rng(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Data(format!("serialising policy: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Data(format!("parsing policy: {e}")))
    }
}

impl Policy for TrainedPolicy {
    fn act(&mut self, state: &StateVector, explore: bool) -> Result<f64> {
        let z = self.scaler.transform(&state.values);
        Ok(sample_action(&self.actor, &z, self.ln_k, !explore, &mut self.rng)?.action)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub calendar_period: u32,
    pub transitions: usize,
    pub buffer_size: usize,
    pub updates: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
}

pub fn write_train_log<W: std::io::Write>(log: &[TrainLogRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for row in log {
        wtr.serialize(row).map_err(|e| Error::Data(format!("writing training log: {e}")))?;
    }
    wtr.flush().map_err(|e| Error::io("training log", e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: TrainedPolicy,
    /// Every transition the learner stored, in arrival order.
    pub transitions: Vec<Transition>,
    pub log: Vec<TrainLogRow>,
    pub agent: SacAgent,
}

/// Fits the feature scaler on the states visited by a zero-action rollout.
pub fn fit_state_scaler(dataset: &Dataset, init: &dyn ClaimInitialiser, env: &EnvConfig) -> Result<FeatureScaler> {
    let out = rollout_calendar(dataset, &mut ZeroPolicy, init, env, false)?;
    if out.transitions.is_empty() {
        return Err(Error::Data("training data yields no transitions".into()));
    }
    FeatureScaler::fit(
        env.profile.feature_kinds(env.n_past),
        out.transitions.iter().map(|t| t.state.as_slice()),
    )
}

/// One chronological pass over the calendar periods of `dataset`. Each
/// calendar period is one environment step: its finalised transitions enter
/// the replay buffer, then `updates_per_step` gradient updates follow once
/// the buffer holds a full batch.
pub fn train(dataset: &Dataset, init: &dyn ClaimInitialiser, env: &EnvConfig, cfg: &SacConfig) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    env.validate()?;
    let mut cfg = cfg.clone();
    cfg.gamma = env.gamma;
    let scaler = fit_state_scaler(dataset, init, env)?;
    let mut agent = SacAgent::new(scaler, env.k, cfg.clone())?;
    let mut rollout = CalendarRollout::new(dataset, init, env.clone())?;
    let mut log = Vec::new();
    let mut step = 0;
    let mut seen = Vec::new();
    while !rollout.is_done() {
        let period = rollout.current_period();
        let transitions = {
            let mut learner = Learner {
                random: step < cfg.warmup_steps,
                agent: &mut agent,
            };
            rollout.step(&mut learner, true)?
        };
        for t in &transitions {
            agent.store(t)?;
        }
        let n_new = transitions.len();
        seen.extend(transitions);
        let mut updates = 0;
        let (mut closs, mut aloss) = (f64::NAN, f64::NAN);
        if agent.buffer.len() >= cfg.batch_size {
            let (mut cs, mut acs) = (0.0, 0.0);
            for _ in 0..cfg.updates_per_step {
                let d = agent.update()?;
                cs += 0.5 * (d.critic1_loss + d.critic2_loss);
                acs += d.actor_loss;
                updates += 1;
            }
            if updates > 0 {
                closs = cs / updates as f64;
                aloss = acs / updates as f64;
            }
        }
        log.push(TrainLogRow {
            step,
            calendar_period: period,
            transitions: n_new,
            buffer_size: agent.buffer.len(),
            updates,
            critic_loss: closs,
            actor_loss: aloss,
            alpha: agent.alpha(),
        });
        step += 1;
    }
    if !(agent.actor.is_finite() && agent.critic1.is_finite() && agent.critic2.is_finite()) {
        return Err(Error::Numeric("training produced non-finite parameters".into()));
    }
    Ok(TrainOutcome {
        policy: agent.frozen_policy(),
        transitions: seen,
        log,
        agent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_log_term_matches_naive() {
        for u in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let naive = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log1m_tanh2(u) - naive).abs() < 1e-10);
        }
        assert!(log1m_tanh2(40.0).is_finite());
    }

    #[test]
    fn deterministic_action_limits() {
        let mut net = Mlp::zeros(&[1, 2], &[Activation::Identity]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = sample_action(&net, &[0.3], 2f64.ln(), true, &mut rng).unwrap();
        assert_eq!(a.action, 0.0);
        assert!(a.log_prob.is_none());
        net.set_layer(0, &[0.0, 0.0], &[1e6, 0.0]).unwrap();
        let a = sample_action(&net, &[0.3], 2f64.ln(), true, &mut rng).unwrap();
        assert!((a.action - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn target_examples() {
        assert_eq!(critic_target(1.5, true, 9.0, 9.0, -1.0, 0.99, 0.2), 1.5);
        assert_eq!(critic_target(1.5, false, 9.0, 8.0, -1.0, 0.0, 0.2), 1.5);
        let y = critic_target(1.0, false, 3.0, 2.0, -0.5, 0.9, 0.2);
        assert!((y - (1.0 + 0.9 * (2.0 + 0.1))).abs() < 1e-12);
    }

    #[test]
    fn config_rejects_rho_one() {
        let cfg = SacConfig {
            rho: 1.0,
            ..SacConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn buffer_respects_capacity() {
        let mut b = ReplayBuffer::new(3);
        for k in 0..5 {
            b.push(Stored {
                state: vec![k as f64],
                action: 0.0,
                reward: 0.0,
                next_state: None,
            });
        }
        assert_eq!(b.len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = b.sample(3, &mut rng);
        let mut vals: Vec<f64> = s.iter().map(|t| t.state[0]).collect();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![2.0, 3.0, 4.0]);
    }
}
