//! A small PPO trainer (clipped surrogate, GAE) and the episode evaluator.

pub mod mlp;
pub mod ppo;

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, OBS_DIM};
use crate::physics::Controls;

pub use ppo::{
    compute_gae, evaluate, loss_and_grad, ppo_update, ppo_update_with, train, Adam, CurvePoint,
    EvalReport, LossStats, Objective, RolloutBuffer, Samples, TrainOptions, TrainOutput, UpdateStats,
};

pub const ACT_DIM: usize = 3;

/// Fixed divisors applied to raw observations before the network.
pub const OBS_SCALE: [f64; OBS_DIM] = [10.0, 1.0, 0.5, 50.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 50.0];
pub const OBS_CLIP: f64 = 5.0;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("sequence lengths differ: {0}")]
    LengthMismatch(String),
    #[error("non-finite loss during update {update}")]
    DivergedUpdate { update: usize },
    #[error("invalid ppo config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lam: f64,
    pub clip_eps: f64,
    pub lr: f64,
    pub rollout_len: usize,
    pub minibatch_size: usize,
    pub epochs_per_update: usize,
    pub total_env_steps: usize,
    pub hidden_sizes: Vec<usize>,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub max_grad_norm: f64,
    pub init_log_std: f64,
    /// Physics steps each policy decision is held for.
    pub decision_period: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lam: 0.95,
            clip_eps: 0.2,
            lr: 3e-4,
            rollout_len: 512,
            minibatch_size: 64,
            epochs_per_update: 4,
            total_env_steps: 500_000,
            hidden_sizes: vec![64, 64],
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            init_log_std: -0.5,
            decision_period: 10,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return bad("lam must be in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be > 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if self.rollout_len == 0
            || self.minibatch_size == 0
            || self.epochs_per_update == 0
            || self.decision_period == 0
        {
            return bad("rollout_len, minibatch_size, epochs_per_update and decision_period must be > 0");
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden sizes must be > 0");
        }
        Ok(())
    }
}

/// Gaussian policy and value function in one flat parameter vector:
/// `[policy MLP | log_std | value MLP]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
    /// Physics steps each action is held for.
    pub decision_period: usize,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], init_log_std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self {
            obs_dim,
            act_dim,
            hidden: hidden.to_vec(),
            decision_period: 1,
            theta: Vec::new(),
        };
        let mut theta = mlp::init(&p.policy_sizes(), 0.01, &mut rng);
        theta.extend(std::iter::repeat_n(init_log_std, act_dim));
        theta.extend(mlp::init(&p.value_sizes(), 1.0, &mut rng));
        p.theta = theta;
        p
    }

    pub fn policy_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.obs_dim];
        s.extend(&self.hidden);
        s.push(self.act_dim);
        s
    }

    pub fn value_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.obs_dim];
        s.extend(&self.hidden);
        s.push(1);
        s
    }

    pub fn policy_len(&self) -> usize {
        mlp::param_count(&self.policy_sizes())
    }

    pub fn log_std_range(&self) -> std::ops::Range<usize> {
        let p = self.policy_len();
        p..p + self.act_dim
    }

    pub fn value_range(&self) -> std::ops::Range<usize> {
        let v = self.log_std_range().end;
        v..self.theta.len()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.theta[self.log_std_range()]
    }

    /// Squashed action mean in [-1, 1].
    pub fn mean(&self, obs: &[f64]) -> Vec<f64> {
        let mut tr = mlp::Trace::default();
        mlp::forward(&self.policy_sizes(), &self.theta[..self.policy_len()], obs, &mut tr);
        tr.output().iter().map(|z| z.tanh()).collect()
    }

    /// Deterministic per-step controller for one episode: the mean action,
    /// re-evaluated every `decision_period` steps and held in between.
    pub fn controller(&self) -> impl FnMut(&[f64; crate::env::OBS_DIM]) -> Controls + '_ {
        let period = self.decision_period.max(1);
        let mut held = Controls::default();
        let mut k = 0usize;
        move |obs| {
            if k.is_multiple_of(period) {
                held = action_to_controls(&self.mean(&obs_features(obs)));
            }
            k += 1;
            held
        }
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        let mut tr = mlp::Trace::default();
        mlp::forward(&self.value_sizes(), &self.theta[self.value_range()], obs, &mut tr);
        tr.output()[0]
    }

    /// Draws an action and returns it with its log-probability.
    pub fn sample(&self, obs: &[f64], rng: &mut impl Rng) -> (Vec<f64>, f64) {
        let mean = self.mean(obs);
        let log_std = self.log_std();
        let a: Vec<f64> = mean
            .iter()
            .zip(log_std)
            .map(|(m, ls)| {
                let z: f64 = rng.sample(StandardNormal);
                m + ls.exp() * z
            })
            .collect();
        let lp = log_prob(&mean, log_std, &a);
        (a, lp)
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    /// Checkpoint document: config echo, layer shapes and the flat weights.
    pub fn save(&self, path: impl AsRef<Path>, cfg: &PpoConfig) -> Result<(), RlError> {
        let path = path.as_ref();
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: cfg.clone(),
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            hidden: self.hidden.clone(),
            decision_period: self.decision_period,
            shapes: self.shapes(),
            weights: self.theta.clone(),
        };
        let text = serde_json::to_string(&doc).map_err(|e| ck_err(path, e))?;
        std::fs::write(path, text).map_err(|e| ck_err(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PpoConfig), RlError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ck_err(path, e))?;
        let doc: Checkpoint = serde_json::from_str(&text).map_err(|e| ck_err(path, e))?;
        let p = PolicyParams {
            obs_dim: doc.obs_dim,
            act_dim: doc.act_dim,
            hidden: doc.hidden,
            decision_period: doc.decision_period,
            theta: doc.weights,
        };
        let expected: usize = p.shapes().iter().map(|s| s.size).sum();
        if p.theta.len() != expected || p.shapes() != doc.shapes {
            return Err(ck_err(path, "weight count does not match the declared shapes"));
        }
        Ok((p, doc.config))
    }

    /// Named tensors in storage order.
    pub fn shapes(&self) -> Vec<TensorShape> {
        let mut out = Vec::new();
        let mut push = |name: String, dims: Vec<usize>| {
            let size = dims.iter().product();
            out.push(TensorShape { name, dims, size });
        };
        for (prefix, sizes) in [("policy", self.policy_sizes()), ("value", self.value_sizes())] {
            if prefix == "value" {
                push("log_std".into(), vec![self.act_dim]);
            }
            for (k, w) in sizes.windows(2).enumerate() {
                push(format!("{prefix}.{k}.weight"), vec![w[1], w[0]]);
                push(format!("{prefix}.{k}.bias"), vec![w[1]]);
            }
        }
        out
    }
}

pub const CHECKPOINT_FORMAT: &str = "splatdrive-ppo-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub dims: Vec<usize>,
    pub size: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    config: PpoConfig,
    obs_dim: usize,
    act_dim: usize,
    hidden: Vec<usize>,
    decision_period: usize,
    shapes: Vec<TensorShape>,
    weights: Vec<f64>,
}

fn ck_err(path: &Path, e: impl std::fmt::Display) -> RlError {
    RlError::Checkpoint {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Diagonal Gaussian log density.
pub fn log_prob(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(a)
        .map(|((m, ls), x)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

pub fn entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (2.0 * PI * std::f64::consts::E).ln()).sum()
}

/// Scaled and clipped network input for a raw environment observation.
pub fn obs_features(raw: &[f64; OBS_DIM]) -> Vec<f64> {
    raw.iter()
        .zip(OBS_SCALE)
        .map(|(v, s)| (v / s).clamp(-OBS_CLIP, OBS_CLIP))
        .collect()
}

/// Maps a policy action `(throttle, steer, brake)` onto vehicle controls;
/// the environment clamps into range.
pub fn action_to_controls(a: &[f64]) -> Controls {
    Controls::new(a[0], a[1], a.get(2).copied().unwrap_or(0.0).max(0.0))
}
