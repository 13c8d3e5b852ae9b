mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use splatdrive::env::{ScenarioConfig, Task, World};
use splatdrive::rl::{
    compute_gae, log_prob, loss_and_grad, ppo_update_with, train, Adam, Objective, PolicyParams, PpoConfig,
    RolloutBuffer, Samples, TrainOptions,
};

struct Batch {
    obs: Vec<f64>,
    actions: Vec<f64>,
    old: Vec<f64>,
    adv: Vec<f64>,
    ret: Vec<f64>,
}

fn tiny_batch(params: &PolicyParams, n: usize, seed: u64) -> Batch {
    let mut r = rng(seed);
    let mut b = Batch { obs: vec![], actions: vec![], old: vec![], adv: vec![], ret: vec![] };
    for _ in 0..n {
        let o: Vec<f64> = (0..params.obs_dim).map(|_| r.random_range(-1.5..1.5)).collect();
        let (a, lp) = params.sample(&o, &mut r);
        b.obs.extend(&o);
        b.actions.extend(&a);
        // old log-probs a little off so ratios differ from 1 on both sides
        b.old.push(lp + r.random_range(-0.1..0.1));
        b.adv.push(r.sample(StandardNormal));
        b.ret.push(r.random_range(-1.0..1.0));
    }
    b
}

fn samples(b: &Batch) -> Samples<'_> {
    Samples { obs: &b.obs, actions: &b.actions, old_log_probs: &b.old, advantages: &b.adv, returns: &b.ret }
}

#[test]
fn gae_matches_discounted_return_with_unit_lambda() {
    let mut r = rng(1);
    for _ in 0..50 {
        let rw: Vec<f64> = (0..20).map(|_| r.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..20).map(|_| r.random_range(-1.0..1.0)).collect();
        let boot = r.random_range(-1.0..1.0);
        let gamma = r.random_range(0.8..1.0);
        let (adv, ret) = compute_gae(&rw, &v, &[false; 20], boot, gamma, 1.0).unwrap();
        let want = discounted_return_minus_value(&rw, &v, boot, gamma);
        for t in 0..20 {
            assert!((adv[t] - want[t]).abs() <= 1e-10);
            assert!((ret[t] - (want[t] + v[t])).abs() <= 1e-10);
        }
    }
}

#[test]
fn gradient_matches_finite_differences_on_2_4_1() {
    let cfg = PpoConfig { hidden_sizes: vec![4], value_coef: 0.5, entropy_coef: 0.01, ..Default::default() };
    for seed in 0..3 {
        let mut params = PolicyParams::new(2, 1, &cfg.hidden_sizes, -0.3, seed);
        // move off the small-gain init so every layer carries signal
        let mut r = rng(seed + 100);
        params.theta.iter_mut().for_each(|t| *t += r.random_range(-0.5..0.5));
        let b = tiny_batch(&params, 8, seed);
        let idx: Vec<usize> = (0..8).collect();
        let mut grad = vec![0.0; params.theta.len()];
        let stats = loss_and_grad(&params, &samples(&b), &idx, &cfg, Objective::Clipped(cfg.clip_eps), &mut grad);
        let inputs = LossInputs {
            obs_dim: 2,
            act_dim: 1,
            hidden: &cfg.hidden_sizes,
            obs: &b.obs,
            actions: &b.actions,
            old_log_probs: &b.old,
            advantages: &b.adv,
            returns: &b.ret,
            clip: Some(cfg.clip_eps),
            value_coef: cfg.value_coef,
            entropy_coef: cfg.entropy_coef,
        };
        assert!((stats.total - ppo_loss(&inputs, &params.theta)).abs() < 1e-12);
        let fd = central_difference(|t| ppo_loss(&inputs, t), &params.theta, 1e-6);
        let err = max_relative_error(&grad, &fd);
        assert!(err <= 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn zero_advantages_leave_policy_weights_still() {
    let cfg = PpoConfig { hidden_sizes: vec![8], ..Default::default() };
    let params = PolicyParams::new(3, 2, &cfg.hidden_sizes, -0.5, 4);
    let mut b = tiny_batch(&params, 16, 4);
    b.adv.iter_mut().for_each(|a| *a = 0.0);
    let mut grad = vec![0.0; params.theta.len()];
    loss_and_grad(&params, &samples(&b), &(0..16).collect::<Vec<_>>(), &cfg, Objective::Clipped(0.2), &mut grad);
    assert!(grad[..params.policy_len()].iter().all(|g| *g == 0.0));
    let ls = params.log_std_range();
    assert!(grad[ls].iter().all(|g| (g + cfg.entropy_coef).abs() < 1e-15));
    assert!(grad[params.value_range()].iter().any(|g| *g != 0.0));
}

fn filled_buffer(params: &PolicyParams, n: usize, seed: u64) -> RolloutBuffer {
    let mut r = rng(seed);
    let mut buf = RolloutBuffer::new(params.obs_dim, params.act_dim, n);
    for t in 0..n {
        let o: Vec<f64> = (0..params.obs_dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let (a, lp) = params.sample(&o, &mut r);
        buf.push(&o, &a, lp, r.random_range(-1.0..1.0), params.value(&o), t % 17 == 16);
    }
    buf.finish(0.3, 0.99, 0.95).unwrap();
    buf
}

#[test]
fn infinite_clip_equals_unclipped_update() {
    let cfg = PpoConfig { epochs_per_update: 1, minibatch_size: 32, hidden_sizes: vec![16, 16], ..Default::default() };
    let params = PolicyParams::new(5, 3, &cfg.hidden_sizes, -0.5, 9);
    let buf = filled_buffer(&params, 128, 9);
    let run = |obj| {
        let mut p = params.clone();
        let mut adam = Adam::new(p.theta.len(), cfg.lr);
        ppo_update_with(&mut p, &mut adam, &buf, &cfg, obj, &mut rng(5), 0).unwrap();
        p.theta
    };
    let a = run(Objective::Clipped(f64::INFINITY));
    let b = run(Objective::Unclipped);
    let d = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(d <= 1e-8, "{d}");
}

#[test]
fn gaussian_policy_density_integrates_to_one() {
    let params = PolicyParams::new(4, 3, &[8], -0.7, 2);
    let mean = params.mean(&[0.3, -0.2, 0.9, 0.0]);
    let ls = params.log_std().to_vec();
    // importance sampling from a wider gaussian proposal
    let widen = 1.6;
    let mut r = rng(17);
    let n = 100_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let mut lq = 0.0;
        let a: Vec<f64> = (0..3)
            .map(|d| {
                let sd = ls[d].exp() * widen;
                let z: f64 = r.sample(StandardNormal);
                lq += -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                mean[d] + sd * z
            })
            .collect();
        acc += (log_prob(&mean, &ls, &a) - lq).exp();
    }
    let est = acc / n as f64;
    assert!((est - 1.0).abs() < 0.01, "{est}");
}

fn short_run(seed: u64, steps: usize) -> splatdrive::rl::TrainOutput {
    let world = Arc::new(World::fixture(Task::StraightSmall).unwrap());
    let cfg = PpoConfig { seed, rollout_len: 64, minibatch_size: 32, total_env_steps: steps, ..Default::default() };
    train(world, &ScenarioConfig::for_task(Task::StraightSmall), &cfg, &TrainOptions::default()).unwrap()
}

#[test]
fn one_rollout_budget_performs_one_update() {
    let cfg = PpoConfig::default();
    let out = short_run(0, 64 * cfg.decision_period);
    assert_eq!(out.updates, 1);
    assert_eq!(out.curve.len(), 1);
}

#[test]
fn training_is_bit_reproducible() {
    let a = short_run(3, 3 * 64 * 10);
    let b = short_run(3, 3 * 64 * 10);
    assert_eq!(a.params.theta.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
               b.params.theta.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.curve, b.curve);
    let c = short_run(4, 3 * 64 * 10);
    assert_ne!(a.params.theta, c.params.theta);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let cfg = PpoConfig::default();
    let p = PolicyParams::new(12, 3, &cfg.hidden_sizes, -0.5, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    p.save(&path, &cfg).unwrap();
    let (q, c) = PolicyParams::load(&path).unwrap();
    assert_eq!(c, cfg);
    assert_eq!(p.theta, q.theta);
    assert_eq!(p.hidden, q.hidden);
    std::fs::write(&path, "{\"format\":\"other\"}").unwrap();
    assert!(PolicyParams::load(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gae_matches_masked_recursion_oracle(
        seed in 0u64..u64::MAX,
        n in 1usize..40,
        gamma in 0.5f64..1.0,
        lam in 0.0f64..=1.0,
    ) {
        let mut r = rng(seed);
        let rw: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| r.random_bool(0.2)).collect();
        let boot = r.random_range(-2.0..2.0);
        let (adv, _) = compute_gae(&rw, &v, &d, boot, gamma, lam).unwrap();
        let want = gae_oracle(&rw, &v, &d, boot, gamma, lam);
        for t in 0..n {
            prop_assert!((adv[t] - want[t]).abs() <= 1e-10);
        }
    }
}
