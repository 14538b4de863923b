//! Greedy evaluation episodes and the reward-retention report.

use std::time::Instant;

use qforce_core::qmac::MultiplierKind;
use qforce_core::qnet::{select_action, Engine, QNetwork, Selection};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::{Action, GridWorld};
use crate::error::Result;
use crate::oracle::{argmax, FloatNet};

/// Something that maps an observation to a greedy action.
pub trait Policy: Sync {
    fn act(&self, obs: &[f64]) -> Result<usize>;
}

impl Policy for FloatNet {
    fn act(&self, obs: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(obs).logits))
    }
}

/// A quantized network executed on the emulated engine.
#[derive(Debug, Clone)]
pub struct QuantPolicy {
    pub net: QNetwork,
    pub kind: MultiplierKind,
}

impl QuantPolicy {
    pub fn new(net: QNetwork) -> Self {
        Self { net, kind: MultiplierKind::Exact }
    }

    /// Action-probability codes for one observation.
    pub fn probs(&self, obs: &[f64]) -> Result<qforce_core::QTensor> {
        let x = self.net.quantize_observation(obs)?;
        let state = self.net.initial_state();
        Ok(Engine::new(self.kind).hrl_forward(&x, &self.net, state.as_ref())?.action_probs)
    }
}

impl Policy for QuantPolicy {
    fn act(&self, obs: &[f64]) -> Result<usize> {
        Ok(select_action(&self.probs(obs)?, Selection::Greedy))
    }
}

/// Generator for episode `index` of a run seeded with `seed`: one ChaCha
/// stream per episode, so results do not depend on scheduling.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Episode {
    pub reward: f64,
    pub steps: usize,
    pub success: bool,
    /// Wall-clock nanoseconds spent in `act`.
    pub infer_ns: u128,
}

/// One greedy episode from the start drawn for `(seed, index)`.
pub fn run_episode<P: Policy + ?Sized>(policy: &P, env: &GridWorld, seed: u64, index: u64) -> Result<Episode> {
    let mut env = env.clone();
    env.reset(&mut episode_rng(seed, index));
    let mut reward = 0.0;
    let mut infer_ns = 0;
    loop {
        let obs = env.render();
        let t = Instant::now();
        let a = policy.act(&obs)?;
        infer_ns += t.elapsed().as_nanos();
        let s = env.step(Action::from_index(a));
        reward += s.reward;
        if s.done {
            return Ok(Episode { reward, steps: env.steps, success: s.success, infer_ns });
        }
    }
}

/// Worker count: `QFRL_THREADS` if set to a positive integer, else all cores.
pub fn thread_count() -> usize {
    std::env::var("QFRL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Episodes `0..episodes`, possibly in parallel; results are in index order.
pub fn run_episodes<P: Policy + ?Sized>(policy: &P, env: &GridWorld, episodes: usize, seed: u64) -> Result<Vec<Episode>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| crate::error::HarnessError::Contract(format!("thread pool: {e}")))?;
    pool.install(|| (0..episodes as u64).into_par_iter().map(|i| run_episode(policy, env, seed, i)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRow {
    /// "float" or "q8", "q16", "q32".
    pub policy: String,
    pub episodes: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub success_rate: f64,
    pub mean_steps: f64,
    /// `mean_reward / float mean_reward`; `None` for an empty row.
    pub retention: Option<f64>,
    /// Mean wall-clock microseconds per inference (not deterministic).
    pub us_per_inference: f64,
}

impl RolloutRow {
    pub fn from_episodes(policy: &str, eps: &[Episode]) -> Self {
        let n = eps.len();
        if n == 0 {
            return Self {
                policy: policy.into(),
                episodes: 0,
                mean_reward: 0.0,
                std_reward: 0.0,
                success_rate: 0.0,
                mean_steps: 0.0,
                retention: None,
                us_per_inference: 0.0,
            };
        }
        let nf = n as f64;
        let mean = eps.iter().map(|e| e.reward).sum::<f64>() / nf;
        let var = eps.iter().map(|e| (e.reward - mean).powi(2)).sum::<f64>() / nf;
        let steps: usize = eps.iter().map(|e| e.steps).sum();
        let ns: u128 = eps.iter().map(|e| e.infer_ns).sum();
        Self {
            policy: policy.into(),
            episodes: n,
            mean_reward: mean,
            std_reward: var.sqrt(),
            success_rate: eps.iter().filter(|e| e.success).count() as f64 / nf,
            mean_steps: steps as f64 / nf,
            retention: None,
            us_per_inference: ns as f64 / 1e3 / steps as f64,
        }
    }
}

/// Float baseline plus one row per quantized policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutReport {
    pub seed: u64,
    pub rows: Vec<RolloutRow>,
}

impl RolloutReport {
    /// Evaluate `float` and each `(label, policy)` on the same episode starts.
    pub fn run(float: &FloatNet, quantized: &[(String, QuantPolicy)], env: &GridWorld, episodes: usize, seed: u64) -> Result<Self> {
        let mut base = RolloutRow::from_episodes("float", &run_episodes(float, env, episodes, seed)?);
        let float_mean = base.mean_reward;
        let retention = |m: f64, n: usize| (n > 0).then(|| m / float_mean);
        base.retention = retention(base.mean_reward, base.episodes);
        let mut rows = vec![base];
        for (label, q) in quantized {
            let mut row = RolloutRow::from_episodes(label, &run_episodes(q, env, episodes, seed)?);
            row.retention = retention(row.mean_reward, row.episodes);
            rows.push(row);
        }
        Ok(Self { seed, rows })
    }

    pub fn row(&self, policy: &str) -> Option<&RolloutRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }
}
