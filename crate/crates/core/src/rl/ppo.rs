//! Rollouts, GAE, the clipped surrogate with analytic gradients, Adam and the
//! training / evaluation loops.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{action_to_controls, entropy, log_prob, mlp, obs_features, PolicyParams, PpoConfig, RlError, ACT_DIM};
use crate::env::{DrivingEnv, EnvError, EpisodeResult, ObsMode, Outcome, ScenarioConfig, World, OBS_DIM};

/// Generalized advantage estimation.
///
/// `δ_t = r_t + γ v_{t+1} (1 − done_t) − v_t` with `v_T = bootstrap`, and
/// `A_t = δ_t + γ λ (1 − done_t) A_{t+1}`. Returns `(advantages, returns)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(RlError::LengthMismatch(format!(
            "rewards {n}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lam * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub capacity: usize,
    /// Row-major `len × obs_dim`.
    pub obs: Vec<f64>,
    /// Row-major `len × act_dim`.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(obs_dim: usize, act_dim: usize, capacity: usize) -> Self {
        Self {
            obs_dim,
            act_dim,
            capacity,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    pub fn clear(&mut self) {
        self.obs.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.rewards.clear();
        self.values.clear();
        self.dones.clear();
        self.advantages.clear();
        self.returns.clear();
    }

    pub fn push(&mut self, obs: &[f64], action: &[f64], log_prob: f64, reward: f64, value: f64, done: bool) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        debug_assert_eq!(action.len(), self.act_dim);
        self.obs.extend_from_slice(obs);
        self.actions.extend_from_slice(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
    }

    /// Fills advantages and returns; call once the buffer is complete.
    pub fn finish(&mut self, bootstrap_value: f64, gamma: f64, lam: f64) -> Result<(), RlError> {
        let (a, r) = compute_gae(&self.rewards, &self.values, &self.dones, bootstrap_value, gamma, lam)?;
        self.advantages = a;
        self.returns = r;
        Ok(())
    }
}

/// Policy objective used by the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Clipped(f64),
    /// Plain importance-weighted policy gradient, `ρ A`.
    Unclipped,
}

/// Borrowed training samples.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub obs: &'a [f64],
    pub actions: &'a [f64],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossStats {
    /// `−mean(surrogate)`.
    pub policy_loss: f64,
    /// `mean((V − R)²)`.
    pub value_loss: f64,
    pub entropy: f64,
    /// `policy_loss + value_coef·value_loss − entropy_coef·entropy`.
    pub total: f64,
    /// `mean(logp_old − logp_new)`.
    pub kl: f64,
    pub clip_frac: f64,
}

/// Total loss over the samples in `idx` and its gradient, written into
/// `grad` (overwritten).
pub fn loss_and_grad(
    params: &PolicyParams,
    s: &Samples,
    idx: &[usize],
    cfg: &PpoConfig,
    objective: Objective,
    grad: &mut [f64],
) -> LossStats {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let (od, ad) = (params.obs_dim, params.act_dim);
    let psizes = params.policy_sizes();
    let vsizes = params.value_sizes();
    let plen = params.policy_len();
    let lsr = params.log_std_range();
    let vr = params.value_range();
    let log_std = params.log_std().to_vec();
    let inv_var: Vec<f64> = log_std.iter().map(|l| (-2.0 * l).exp()).collect();
    let n = idx.len() as f64;

    let mut stats = LossStats::default();
    let mut ptrace = mlp::Trace::default();
    let mut vtrace = mlp::Trace::default();
    let mut d_z = vec![0.0; ad];
    let mut d_ls = vec![0.0; ad];
    let (g_policy, rest) = grad.split_at_mut(plen);
    let (g_ls, g_value) = rest.split_at_mut(ad);
    for &i in idx {
        let obs = &s.obs[i * od..(i + 1) * od];
        let act = &s.actions[i * ad..(i + 1) * ad];
        mlp::forward(&psizes, &params.theta[..plen], obs, &mut ptrace);
        let mean: Vec<f64> = ptrace.output().iter().map(|z| z.tanh()).collect();
        let lp = log_prob(&mean, &log_std, act);
        let ratio = (lp - s.old_log_probs[i]).exp();
        let a = s.advantages[i];
        let (surr, d_ratio) = match objective {
            Objective::Unclipped => (ratio * a, a),
            Objective::Clipped(eps) => {
                let unclipped = ratio * a;
                let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * a;
                if (ratio - 1.0).abs() > eps {
                    stats.clip_frac += 1.0;
                }
                if unclipped <= clipped {
                    (unclipped, a)
                } else {
                    (clipped, 0.0)
                }
            }
        };
        stats.policy_loss -= surr / n;
        stats.kl += (s.old_log_probs[i] - lp) / n;

        let d_lp = -d_ratio * ratio / n;
        if d_lp != 0.0 {
            for d in 0..ad {
                let diff = act[d] - mean[d];
                d_z[d] = d_lp * diff * inv_var[d] * (1.0 - mean[d] * mean[d]);
                d_ls[d] = d_lp * (diff * diff * inv_var[d] - 1.0);
                g_ls[d] += d_ls[d];
            }
            mlp::backward(&psizes, &params.theta[..plen], &ptrace, &d_z, g_policy);
        }

        mlp::forward(&vsizes, &params.theta[vr.clone()], obs, &mut vtrace);
        let err = vtrace.output()[0] - s.returns[i];
        stats.value_loss += err * err / n;
        let d_v = 2.0 * cfg.value_coef * err / n;
        mlp::backward(&vsizes, &params.theta[vr.clone()], &vtrace, &[d_v], g_value);
    }
    stats.entropy = entropy(&log_std);
    for g in g_ls.iter_mut() {
        *g -= cfg.entropy_coef;
    }
    debug_assert_eq!(lsr.len(), ad);
    stats.clip_frac /= n;
    stats.total = stats.policy_loss + cfg.value_coef * stats.value_loss - cfg.entropy_coef * stats.entropy;
    stats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One descent step on `theta`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            theta[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_frac: f64,
    pub entropy: f64,
}

/// Advantages shifted and scaled to mean 0, std 1.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    adv.iter().map(|a| (a - mean) / std).collect()
}

/// `epochs_per_update` passes of shuffled minibatch Adam steps.
pub fn ppo_update_with(
    params: &mut PolicyParams,
    adam: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    objective: Objective,
    rng: &mut impl RngCore,
    update_index: usize,
) -> Result<UpdateStats, RlError> {
    if buffer.advantages.len() != buffer.len() {
        return Err(RlError::LengthMismatch("advantages not computed".into()));
    }
    let adv = normalize_advantages(&buffer.advantages);
    let samples = Samples {
        obs: &buffer.obs,
        actions: &buffer.actions,
        old_log_probs: &buffer.log_probs,
        advantages: &adv,
        returns: &buffer.returns,
    };
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut grad = vec![0.0; params.theta.len()];
    let mut acc = UpdateStats::default();
    let mut batches = 0.0;
    for _ in 0..cfg.epochs_per_update {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch_size) {
            let st = loss_and_grad(params, &samples, idx, cfg, objective, &mut grad);
            if !st.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(RlError::DivergedUpdate { update: update_index });
            }
            if cfg.max_grad_norm > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.max_grad_norm {
                    let k = cfg.max_grad_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= k);
                }
            }
            adam.step(&mut params.theta, &grad);
            acc.policy_loss += st.policy_loss;
            acc.value_loss += st.value_loss;
            acc.kl += st.kl;
            acc.clip_frac += st.clip_frac;
            acc.entropy += st.entropy;
            batches += 1.0;
        }
    }
    Ok(UpdateStats {
        policy_loss: acc.policy_loss / batches,
        value_loss: acc.value_loss / batches,
        kl: acc.kl / batches,
        clip_frac: acc.clip_frac / batches,
        entropy: acc.entropy / batches,
    })
}

/// One update from fresh optimizer state, shuffling seeded by `cfg.seed`.
pub fn ppo_update(
    params: &PolicyParams,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
) -> Result<(PolicyParams, UpdateStats), RlError> {
    let mut p = params.clone();
    let mut adam = Adam::new(p.theta.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let st = ppo_update_with(&mut p, &mut adam, buffer, cfg, Objective::Clipped(cfg.clip_eps), &mut rng, 0)?;
    Ok((p, st))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub env_steps: usize,
    /// Mean return of the last (up to) 20 finished episodes.
    pub mean_episode_reward: f64,
    /// Goal fraction over the same episodes.
    pub success_rate: f64,
    pub episodes: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_frac: f64,
}

pub const CURVE_HEADER: &str = "env_steps,mean_episode_reward,success_rate,episodes,policy_loss,value_loss,kl,clip_frac";

impl CurvePoint {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.env_steps,
            self.mean_episode_reward,
            self.success_rate,
            self.episodes,
            self.policy_loss,
            self.value_loss,
            self.kl,
            self.clip_frac
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub checkpoint_dir: Option<PathBuf>,
    /// Updates between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub curve_path: Option<PathBuf>,
    /// Updates between evaluations; 0 disables them.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// Stop as soon as an evaluation reaches this accuracy percent.
    pub target_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub curve: Vec<CurvePoint>,
    /// `(env_steps, accuracy percent)` for each periodic evaluation.
    pub evals: Vec<(usize, f64)>,
    pub env_steps: usize,
    pub updates: usize,
    pub reached_target_at: Option<usize>,
}

/// Alternating rollout / update loop.
///
/// Each buffer entry is one policy decision held for `decision_period`
/// physics steps (its reward is the sum over those steps), so one update
/// consumes `rollout_len * decision_period` environment steps and training
/// runs `total_env_steps / (rollout_len * decision_period)` updates, at least
/// one. Truncated episodes bootstrap from the value of the final state.
pub fn train(
    world: Arc<World>,
    scenario: &ScenarioConfig,
    cfg: &PpoConfig,
    opts: &TrainOptions,
) -> Result<TrainOutput, RlError> {
    cfg.validate()?;
    let mut sc = scenario.clone();
    sc.obs_mode = ObsMode::Vector;
    let mut env = DrivingEnv::new(Arc::clone(&world), sc.clone())?;
    let mut params = PolicyParams::new(OBS_DIM, ACT_DIM, &cfg.hidden_sizes, cfg.init_log_std, cfg.seed);
    params.decision_period = cfg.decision_period;
    let mut adam = Adam::new(params.theta.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut buffer = RolloutBuffer::new(OBS_DIM, ACT_DIM, cfg.rollout_len);

    let mut curve_file = match &opts.curve_path {
        Some(p) => {
            let mut f = std::fs::File::create(p).map_err(|e| super::ck_err(p, e))?;
            writeln!(f, "{CURVE_HEADER}").map_err(|e| super::ck_err(p, e))?;
            Some((f, p.clone()))
        }
        None => None,
    };
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| super::ck_err(dir, e))?;
    }

    let updates = (cfg.total_env_steps / (cfg.rollout_len * cfg.decision_period)).max(1);
    let mut recent: std::collections::VecDeque<(f64, bool)> = Default::default();
    let mut episodes = 0usize;
    let mut env_steps = 0usize;
    let mut curve = Vec::new();
    let mut evals = Vec::new();
    let mut reached = None;
    let mut done_updates = 0;

    env.reset(rng.next_u64());
    let mut feat = obs_features(&env.observation_vector());
    let mut ep_return = 0.0;
    for u in 0..updates {
        buffer.clear();
        while !buffer.is_full() {
            let (a, lp) = params.sample(&feat, &mut rng);
            let v = params.value(&feat);
            let controls = action_to_controls(&a);
            let mut reward = 0.0;
            let (mut done, mut truncated, mut outcome) = (false, false, None);
            for _ in 0..cfg.decision_period {
                let r = match env.step(controls) {
                    Ok(t) => {
                        done = t.terminated || t.truncated;
                        truncated = t.truncated;
                        outcome = t.info.outcome;
                        t.reward
                    }
                    Err(EnvError::Physics(_)) => {
                        done = true;
                        outcome = Some(Outcome::CollisionWall);
                        sc.reward.collision
                    }
                    Err(e) => return Err(e.into()),
                };
                reward += r;
                env_steps += 1;
                if done {
                    break;
                }
            }
            ep_return += reward;
            if truncated {
                reward += cfg.gamma * params.value(&obs_features(&env.observation_vector()));
            }
            buffer.push(&feat, &a, lp, reward, v, done);
            if done {
                episodes += 1;
                recent.push_back((ep_return, outcome == Some(Outcome::Goal)));
                if recent.len() > 20 {
                    recent.pop_front();
                }
                ep_return = 0.0;
                env.reset(rng.next_u64());
            }
            feat = obs_features(&env.observation_vector());
        }
        let bootstrap = params.value(&feat);
        buffer.finish(bootstrap, cfg.gamma, cfg.lam)?;
        let st = ppo_update_with(
            &mut params,
            &mut adam,
            &buffer,
            cfg,
            super::ppo::Objective::Clipped(cfg.clip_eps),
            &mut rng,
            u,
        )?;
        done_updates = u + 1;

        let k = recent.len().max(1) as f64;
        let point = CurvePoint {
            env_steps,
            mean_episode_reward: recent.iter().map(|r| r.0).sum::<f64>() / k,
            success_rate: recent.iter().filter(|r| r.1).count() as f64 / k,
            episodes,
            policy_loss: st.policy_loss,
            value_loss: st.value_loss,
            kl: st.kl,
            clip_frac: st.clip_frac,
        };
        log::debug!("update {u}: {}", point.csv_row());
        if let Some((f, p)) = &mut curve_file {
            writeln!(f, "{}", point.csv_row()).map_err(|e| super::ck_err(p, e))?;
        }
        curve.push(point);

        if let Some(dir) = &opts.checkpoint_dir {
            if opts.checkpoint_every > 0 && done_updates % opts.checkpoint_every == 0 {
                params.save(dir.join(format!("checkpoint_{env_steps:08}.json")), cfg)?;
            }
        }
        if opts.eval_every > 0 && done_updates % opts.eval_every == 0 {
            let rep = evaluate(&params, Arc::clone(&world), &sc, opts.eval_episodes, opts.eval_seed)?;
            log::info!("env_steps {env_steps}: eval accuracy {:.1}%", rep.accuracy);
            evals.push((env_steps, rep.accuracy));
            if opts.target_accuracy.is_some_and(|t| rep.accuracy >= t) {
                reached = Some(env_steps);
                break;
            }
        }
    }
    if let Some(dir) = &opts.checkpoint_dir {
        params.save(dir.join("final.json"), cfg)?;
    }
    Ok(TrainOutput {
        params,
        curve,
        evals,
        env_steps,
        updates: done_updates,
        reached_target_at: reached,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent of episodes ending at the goal.
    pub accuracy: f64,
    pub outcomes: Vec<EpisodeResult>,
}

/// Runs `episodes` deterministic (mean-action) episodes, holding each action
/// for the policy's decision period, with seeds
/// `base_seed..base_seed + episodes`.
pub fn evaluate(
    params: &PolicyParams,
    world: Arc<World>,
    scenario: &ScenarioConfig,
    episodes: usize,
    base_seed: u64,
) -> Result<EvalReport, RlError> {
    let mut sc = scenario.clone();
    sc.obs_mode = ObsMode::Vector;
    let outcomes: Vec<EpisodeResult> = (0..episodes as u64)
        .into_par_iter()
        .map(|k| {
            let mut env = DrivingEnv::new(Arc::clone(&world), sc.clone())?;
            env.reset(base_seed + k);
            let period = params.decision_period.max(1);
            'episode: loop {
                let a = params.mean(&obs_features(&env.observation_vector()));
                for _ in 0..period {
                    match env.step(action_to_controls(&a)) {
                        Ok(t) if t.terminated || t.truncated => break 'episode,
                        Ok(_) => {}
                        Err(EnvError::Physics(_)) => break 'episode,
                        Err(e) => return Err(RlError::from(e)),
                    }
                }
            }
            Ok(env.result().expect("episode ended"))
        })
        .collect::<Result<_, RlError>>()?;
    let goals = outcomes.iter().filter(|r| r.outcome == Outcome::Goal).count();
    Ok(EvalReport {
        accuracy: if episodes == 0 {
            0.0
        } else {
            100.0 * goals as f64 / episodes as f64
        },
        outcomes,
    })
}
