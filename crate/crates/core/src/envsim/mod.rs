//! Vectorised toy environments and N-worker × T-step rollout collection.

mod envs;

pub use envs::{cartpole, pixelgrid, pointmass, EnvId, EnvInstance, StepOutcome};

use crate::error::{Error, Result};
use crate::network::{ActorCritic, HeadKind};
use crate::numerics::Mat;
use crate::policy::{
    collect_actions, gaussian_logprob, softmax_logprob, ActionValue, Actions, PolicyHead,
};

/// The `N × T` transition minibatch of one iteration.
///
/// Samples are stored time-major: sample `k·N + i` is worker `i` at step `k`.
#[derive(Clone, Debug)]
pub struct RolloutBatch {
    pub n_workers: usize,
    pub horizon: usize,
    /// `M × obs`
    pub obs: Mat,
    pub actions: Actions,
    pub rewards: Vec<f64>,
    /// 1.0 where the transition ended an episode.
    pub dones: Vec<f64>,
    /// `V(s)` at collection time.
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Observations after the last step, `N × obs`; become next iteration's start states.
    pub final_obs: Mat,
    /// `V(s'⁽ᵀ⁾)` per worker.
    pub bootstrap_values: Vec<f64>,
    pub q: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Returns of episodes finished during collection, in (step, worker) order.
    pub finished_episodes: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.n_workers * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fills `q` and `advantages`.
    pub fn compute_targets(&mut self, gamma: f64) {
        self.q = compute_q_targets(
            &self.rewards,
            &self.dones,
            &self.bootstrap_values,
            self.n_workers,
            self.horizon,
            gamma,
        );
        self.advantages = compute_advantage(&self.q, &self.values);
    }
}

/// Stacks per-worker observations into an `N × obs` matrix.
pub fn stack_obs(envs: &[EnvInstance]) -> Mat {
    let rows: Vec<Vec<f64>> = envs.iter().map(EnvInstance::observation).collect();
    Mat::from_rows(&rows).expect("uniform observation width")
}

/// Runs every worker for `horizon` steps under the current policy.
///
/// Worker `i` samples its actions from its own random stream, so the batch
/// depends only on the network and the environments' states.
pub fn collect(
    envs: &mut [EnvInstance],
    net: &ActorCritic,
    horizon: usize,
) -> Result<RolloutBatch> {
    let n = envs.len();
    if n == 0 || horizon == 0 {
        return Err(Error::Config(
            "collection needs at least one worker and one step".into(),
        ));
    }
    let obs_len = net.spec().obs.len();
    let m = n * horizon;
    let mut obs = Vec::with_capacity(m * obs_len);
    let mut actions = Vec::with_capacity(m);
    let mut rewards = Vec::with_capacity(m);
    let mut dones = Vec::with_capacity(m);
    let mut values = Vec::with_capacity(m);
    let mut log_probs = Vec::with_capacity(m);
    let mut finished = Vec::new();

    let mut current = stack_obs(envs);
    for _ in 0..horizon {
        let pass = net.forward(&current)?;
        let head = head_of(net, &pass.head);
        let step_actions: Vec<ActionValue> = envs
            .iter_mut()
            .enumerate()
            .map(|(i, env)| head.sample_row(i, env.rng_mut()))
            .collect();
        let batch_actions = collect_actions(step_actions.clone());
        log_probs.extend(log_prob(net, &pass.head, &batch_actions)?);
        obs.extend_from_slice(current.data());
        values.extend_from_slice(&pass.values);

        let mut next = Vec::with_capacity(n * obs_len);
        for (env, action) in envs.iter_mut().zip(&step_actions) {
            let out = env.step(action)?;
            rewards.push(out.reward);
            dones.push(if out.done { 1.0 } else { 0.0 });
            if let Some(ret) = out.episode_return {
                finished.push(ret);
            }
            next.extend(out.obs);
        }
        actions.extend(step_actions);
        current = Mat::from_vec(n, obs_len, next)?;
    }
    let bootstrap_values = net.forward(&current)?.values;
    Ok(RolloutBatch {
        n_workers: n,
        horizon,
        obs: Mat::from_vec(m, obs_len, obs)?,
        actions: collect_actions(actions),
        rewards,
        dones,
        values,
        log_probs,
        final_obs: current,
        bootstrap_values,
        q: Vec::new(),
        advantages: Vec::new(),
        finished_episodes: finished,
    })
}

pub(crate) fn head_of<'a>(net: &'a ActorCritic, head: &'a Mat) -> PolicyHead<'a> {
    match net.spec().head {
        HeadKind::Softmax { .. } => PolicyHead::Softmax { logits: head },
        HeadKind::Gaussian { .. } => PolicyHead::Gaussian {
            mean: head,
            log_std: net.log_std.as_deref().expect("Gaussian head has log-std"),
        },
    }
}

pub(crate) fn log_prob(net: &ActorCritic, head: &Mat, actions: &Actions) -> Result<Vec<f64>> {
    match actions {
        Actions::Discrete(a) => softmax_logprob(head, a),
        Actions::Continuous(a) => gaussian_logprob(head, net.log_std.as_deref().unwrap_or(&[]), a),
    }
}

/// n-step bootstrapped targets, computed backwards per worker:
/// `Q_T = r_T + γ(1−d_T)V(s'_T)`, `Q_k = r_k + γ(1−d_k)Q_{k+1}`.
///
/// Inputs are time-major (`k·N + i`); the output has the same layout.
pub fn compute_q_targets(
    rewards: &[f64],
    dones: &[f64],
    bootstrap_values: &[f64],
    n_workers: usize,
    horizon: usize,
    gamma: f64,
) -> Vec<f64> {
    assert_eq!(rewards.len(), n_workers * horizon);
    assert_eq!(dones.len(), rewards.len());
    assert_eq!(bootstrap_values.len(), n_workers);
    let mut q = vec![0.0; rewards.len()];
    for i in 0..n_workers {
        let mut next = bootstrap_values[i];
        for k in (0..horizon).rev() {
            let idx = k * n_workers + i;
            next = rewards[idx] + gamma * (1.0 - dones[idx]) * next;
            q[idx] = next;
        }
    }
    q
}

/// `A = Q − V`, no normalisation.
pub fn compute_advantage(q: &[f64], values: &[f64]) -> Vec<f64> {
    q.iter().zip(values).map(|(q, v)| q - v).collect()
}
