//! Linear Q-learning on tile-coded features.

use std::io::Write;

use rand::Rng;

use crate::crossbar::UpdateStats;
use crate::error::Result;
use crate::trainer::{Activation, Backend, LayerGradient, LayerSpec, Network};

use super::mountain_car::{Action, MountainCar, MountainCarState};
use super::tiles::TileCoder;

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_STEP_SIZE: f64 = 0.00625;
pub const MAX_EPISODE_STEPS: u32 = 1000;

/// ε-greedy agent whose action values are one linear layer over the features.
#[derive(Debug, Clone)]
pub struct QAgent {
    net: Network,
    coder: TileCoder,
    epsilon: f64,
    gamma: f64,
}

impl QAgent {
    /// Kaiming-initialized `features → 3` layer without bias.
    pub fn new<R: Rng + ?Sized>(
        backend: &Backend,
        coder: TileCoder,
        epsilon: f64,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = LayerSpec::new(coder.capacity(), Action::ALL.len(), Activation::Identity);
        let net = Network::new(vec![spec], backend, false, rng)?;
        Self::from_network(net, coder, epsilon, gamma)
    }

    pub fn from_network(net: Network, coder: TileCoder, epsilon: f64, gamma: f64) -> Result<Self> {
        if net.input_dim() != coder.capacity() || net.output_dim() != Action::ALL.len() {
            return Err(crate::Error::InvalidNetwork(format!(
                "q network must map {} features to {} actions",
                coder.capacity(),
                Action::ALL.len()
            )));
        }
        if !(0.0..=1.0).contains(&epsilon) || !(0.0..=1.0).contains(&gamma) {
            return Err(crate::Error::Config(format!(
                "epsilon and gamma must lie in [0, 1], got {epsilon} and {gamma}"
            )));
        }
        Ok(Self {
            net,
            coder,
            epsilon,
            gamma,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn coder(&self) -> &TileCoder {
        &self.coder
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Dense binary tile features of `s`.
    pub fn features(&mut self, s: &MountainCarState) -> Result<Vec<f64>> {
        let active = self.coder.encode_state(s)?;
        Ok(self.coder.to_dense(&active))
    }

    pub fn q_values(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.forward_pass(features)?.output().to_vec())
    }

    /// With probability ε a uniformly random action (possibly the greedy
    /// one), otherwise a maximizer of `q` with ties broken at random.
    pub fn select_action<R: Rng + ?Sized>(&self, q: &[f64], rng: &mut R) -> Action {
        let i = if rng.random::<f64>() < self.epsilon {
            rng.random_range(0..q.len())
        } else {
            greedy(q, rng)
        };
        Action::from_index(i).expect("three action values")
    }
}

/// Uniform choice among the maximizers of `q`.
pub fn greedy<R: Rng + ?Sized>(q: &[f64], rng: &mut R) -> usize {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..q.len()).filter(|&i| q[i] == best).collect();
    match ties.len() {
        0 => 0,
        1 => ties[0],
        n => ties[rng.random_range(0..n)],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub total_reward: f64,
    pub steps: u32,
    pub reached_goal: bool,
    pub stats: UpdateStats,
}

/// Runs one ε-greedy episode from `env`'s current state, applying
/// `W ← W + α (R + γ max q(S') - q(S, A)) ∇q(S, A)` after every transition.
/// The bootstrap term is dropped on reaching the goal but kept when the
/// step cap cuts the episode short.
pub fn q_learning_episode<R: Rng + ?Sized>(
    agent: &mut QAgent,
    env: &mut MountainCar,
    rng: &mut R,
) -> Result<EpisodeOutcome> {
    let mut total_reward = 0.0;
    let mut steps = 0u32;
    let mut stats = UpdateStats::default();
    let mut reached_goal = false;

    let mut x = agent.features(&env.state())?;
    let mut q = agent.q_values(&x)?;
    while steps < MAX_EPISODE_STEPS {
        let action = agent.select_action(&q, rng);
        let t = env.step(action)?;
        steps += 1;
        total_reward += t.reward;

        let next_x = if t.done {
            None
        } else {
            Some(agent.features(&t.state)?)
        };
        let target = match &next_x {
            None => t.reward,
            Some(nx) => {
                let next_q = agent.q_values(nx)?;
                t.reward + agent.gamma * next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        };
        // squared-error gradient on the chosen output only
        let mut delta = vec![0.0; q.len()];
        delta[action.index()] = q[action.index()] - target;
        let grad = LayerGradient { delta, input: x };
        stats += agent.net.apply_layer_gradient(0, &grad, rng)?;

        match next_x {
            None => {
                reached_goal = true;
                break;
            }
            Some(nx) => {
                q = agent.q_values(&nx)?;
                x = nx;
            }
        }
    }
    Ok(EpisodeOutcome {
        total_reward,
        steps,
        reached_goal,
        stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u32,
    pub total_reward: f64,
    pub steps: u32,
    pub epsilon: f64,
}

/// Trains for `episodes` episodes, each starting from a fresh reset drawn
/// from `env_rng`.
pub fn run_episodes<E: Rng + ?Sized, P: Rng + ?Sized>(
    agent: &mut QAgent,
    episodes: u32,
    env_rng: &mut E,
    policy_rng: &mut P,
) -> Result<Vec<EpisodeRecord>> {
    (0..episodes)
        .map(|episode| {
            let mut env = MountainCar::reset(env_rng);
            let out = q_learning_episode(agent, &mut env, policy_rng)?;
            Ok(EpisodeRecord {
                episode,
                total_reward: out.total_reward,
                steps: out.steps,
                epsilon: agent.epsilon,
            })
        })
        .collect()
}

/// `run_id,episode,total_reward,steps,epsilon`; header when `header` is set.
pub fn write_episode_csv<W: Write>(
    records: &[EpisodeRecord],
    run_id: usize,
    header: bool,
    mut w: W,
) -> Result<()> {
    if header {
        writeln!(w, "run_id,episode,total_reward,steps,epsilon")?;
    }
    for r in records {
        writeln!(
            w,
            "{run_id},{},{},{},{}",
            r.episode, r.total_reward, r.steps, r.epsilon
        )?;
    }
    Ok(())
}

/// Mean total reward over the last `n` records.
pub fn final_mean_reward(records: &[EpisodeRecord], n: usize) -> f64 {
    let tail = &records[records.len().saturating_sub(n)..];
    tail.iter().map(|r| r.total_reward).sum::<f64>() / tail.len().max(1) as f64
}
