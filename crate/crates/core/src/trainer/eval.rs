use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envsim::{EnvId, EnvInstance};
use crate::error::Result;
use crate::network::{ActorCritic, HeadKind};
use crate::numerics::Mat;
use crate::policy::ActionValue;

use super::checkpoint;

/// Evaluation environments use seeds offset from the training seed.
pub const EVAL_SEED_OFFSET: u64 = 1_000_003;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl EvalReport {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std = (returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
        EvalReport { returns, mean, std }
    }
}

/// Plays `episodes` full episodes on a single environment.
///
/// `greedy` takes the distribution's mode; otherwise actions are sampled.
pub fn evaluate(
    net: &ActorCritic,
    env: EnvId,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<EvalReport> {
    let mut instance = EnvInstance::new(env, seed, 0);
    let mut obs = instance.observation();
    let mut returns = Vec::with_capacity(episodes);
    while returns.len() < episodes {
        let pass = net.forward(&Mat::from_vec(1, obs.len(), obs)?)?;
        let head = crate::envsim::head_of(net, &pass.head);
        let action = if greedy {
            head.greedy_row(0)
        } else {
            head.sample_row(0, instance.rng_mut())
        };
        let out = instance.step(&action)?;
        if let Some(r) = out.episode_return {
            returns.push(r);
        }
        obs = out.obs;
    }
    Ok(EvalReport::from_returns(returns))
}

/// Loads a checkpoint and evaluates its policy on the training environment.
pub fn eval_checkpoint(path: &Path, episodes: usize, greedy: bool) -> Result<EvalReport> {
    let t = checkpoint::load(path)?;
    evaluate(
        &t.agent.net,
        t.config.env,
        episodes,
        t.config.seed.wrapping_add(EVAL_SEED_OFFSET),
        greedy,
    )
}

/// Scripted agent choosing uniformly among discrete actions, or uniform forces in `[−1, 1]`.
pub fn random_agent(env: EnvId, episodes: usize, seed: u64) -> Result<EvalReport> {
    let mut instance = EnvInstance::new(env, seed, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut returns = Vec::with_capacity(episodes);
    while returns.len() < episodes {
        let action = match env.head() {
            HeadKind::Softmax { actions } => ActionValue::Discrete(rng.random_range(0..actions)),
            HeadKind::Gaussian { dim } => {
                ActionValue::Continuous((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            }
        };
        if let Some(r) = instance.step(&action)?.episode_return {
            returns.push(r);
        }
    }
    Ok(EvalReport::from_returns(returns))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_statistics() {
        let r = EvalReport::from_returns(vec![1.0, 3.0]);
        assert_eq!((r.mean, r.std), (2.0, 1.0));
    }

    #[test]
    fn random_cartpole_episodes_are_short() {
        let r = random_agent(EnvId::CartPoleLite, 50, 1).unwrap();
        assert_eq!(r.returns.len(), 50);
        assert!(r.mean > 8.0 && r.mean < 40.0, "{}", r.mean);
    }
}
