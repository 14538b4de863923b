//! REINFORCE training of the float policy.

use qforce_core::qnet::NetworkSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Action, GridWorld};
use crate::error::{HarnessError, Result};
use crate::oracle::{FloatNet, Trace};
use crate::rollout::{run_episodes, RolloutRow};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Episode budget; training continues in `eval_every` chunks up to
    /// `budget_factor × episodes` until the target is met.
    pub episodes: usize,
    pub lr: f64,
    pub gamma: f64,
    /// Episodes per gradient step.
    pub batch: usize,
    pub target: f64,
    pub budget_factor: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            lr: 3e-3,
            gamma: 0.97,
            batch: 8,
            target: 0.8,
            budget_factor: 10,
            eval_every: 250,
            eval_episodes: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub net: FloatNet,
    pub episodes: usize,
    /// Greedy mean reward of the returned network on the evaluation starts.
    pub eval_reward: f64,
    /// `(episodes trained, greedy mean reward)` at every evaluation.
    pub history: Vec<(usize, f64)>,
}

/// Seed of the held-out evaluation starts used while training.
pub const EVAL_SEED_OFFSET: u64 = 0x5eed_0e7a1;

/// Adam with the usual defaults (β = 0.9, 0.999; ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &FloatNet, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = net.tensors().iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self { lr, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, net: &mut FloatNet, grads: &FloatNet) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        let grads = grads.tensors();
        for (k, p) in net.tensors_mut().into_iter().enumerate() {
            let g = grads[k].2;
            for i in 0..p.len() {
                self.m[k][i] = B1 * self.m[k][i] + (1.0 - B1) * g[i];
                self.v[k][i] = B2 * self.v[k][i] + (1.0 - B2) * g[i] * g[i];
                p[i] -= self.lr * (self.m[k][i] / c1) / ((self.v[k][i] / c2).sqrt() + 1e-8);
            }
        }
    }
}

struct Transition {
    trace: Trace,
    action: usize,
    reward: f64,
}

fn sample<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Greedy mean reward on the evaluation starts for `seed`.
pub fn evaluate(net: &FloatNet, env: &GridWorld, episodes: usize, seed: u64) -> Result<f64> {
    Ok(RolloutRow::from_episodes("float", &run_episodes(net, env, episodes, seed ^ EVAL_SEED_OFFSET)?).mean_reward)
}

/// Vanilla policy gradient with a reward-to-go return and a batch-mean
/// baseline. Deterministic for a given seed.
pub fn train_oracle(env: &GridWorld, spec: &NetworkSpec, seed: u64, cfg: &TrainConfig) -> Result<TrainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = FloatNet::init(spec, &mut rng)?;
    let mut adam = Adam::new(&net, cfg.lr);
    let limit = cfg.episodes * cfg.budget_factor;
    let mut history = Vec::new();
    let mut done = 0;
    let mut best = f64::NEG_INFINITY;
    while done < limit {
        let chunk_end = (done + cfg.eval_every).min(limit);
        while done < chunk_end {
            let n = cfg.batch.min(chunk_end - done);
            update(&mut net, &mut adam, env, n, cfg.gamma, &mut rng);
            done += n;
        }
        let score = evaluate(&net, env, cfg.eval_episodes, seed)?;
        history.push((done, score));
        best = best.max(score);
        if done >= cfg.episodes && score >= cfg.target {
            return Ok(TrainReport { net, episodes: done, eval_reward: score, history });
        }
    }
    Err(HarnessError::TrainingFailed { target: cfg.target, episodes: limit, best })
}

fn update(net: &mut FloatNet, adam: &mut Adam, env: &GridWorld, episodes: usize, gamma: f64, rng: &mut ChaCha8Rng) {
    let mut batch: Vec<(Transition, f64)> = Vec::new();
    for _ in 0..episodes {
        let mut e = env.clone();
        e.reset(rng);
        let mut traj = Vec::new();
        loop {
            let trace = net.forward(&e.render());
            let action = sample(&trace.probs, rng);
            let s = e.step(Action::from_index(action));
            traj.push(Transition { trace, action, reward: s.reward });
            if s.done {
                break;
            }
        }
        let mut g = 0.0;
        let mut returns = vec![0.0; traj.len()];
        for (t, tr) in traj.iter().enumerate().rev() {
            g = tr.reward + gamma * g;
            returns[t] = g;
        }
        batch.extend(traj.into_iter().zip(returns));
    }
    let n = batch.len() as f64;
    let mean = batch.iter().map(|b| b.1).sum::<f64>() / n;
    let std = (batch.iter().map(|b| (b.1 - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
    let mut grads = net.zeros_like();
    for (tr, ret) in &batch {
        let adv = (ret - mean) / std;
        // d(−adv·log π(a))/d logits = adv·(π − onehot(a))
        let dlogits: Vec<f64> = tr
            .trace
            .probs
            .iter()
            .enumerate()
            .map(|(i, &p)| adv * (p - if i == tr.action { 1.0 } else { 0.0 }) / n)
            .collect();
        net.backward(&tr.trace, &dlogits, &mut grads);
    }
    adam.step(net, &grads);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_follows_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = [0; 3];
        for _ in 0..10_000 {
            counts[sample(&[0.2, 0.0, 0.8], &mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((1800..2200).contains(&counts[0]));
    }

    #[test]
    fn adam_moves_against_gradient() {
        let spec = NetworkSpec::default_fc(qforce_core::Precision::FxP16);
        let mut net = FloatNet::zeros(&spec).unwrap();
        let mut g = net.zeros_like();
        g.head.b = vec![1.0, -1.0, 0.0, 2.0];
        let mut adam = Adam::new(&net, 0.01);
        adam.step(&mut net, &g);
        assert!(net.head.b[0] < 0.0 && net.head.b[1] > 0.0 && net.head.b[2] == 0.0);
        assert!((net.head.b[3] + 0.01).abs() < 1e-6);
    }
}
