use crate::error::{Error, Result};
use crate::network::{ActorCritic, ForwardPass, Gradients, HeadKind};
use crate::numerics::{l2_clip, Mat};
use crate::policy::{
    gaussian_entropy, gaussian_logprob, gaussian_score_log_std, gaussian_score_mean,
    softmax_entropy_with_grad, softmax_logprob, softmax_score, Actions, EntropyMode,
};

/// Loss terms, gradients and the intermediate quantities the optimizers reuse.
#[derive(Clone, Debug)]
pub struct LossEval {
    /// `L(Ψ) + L(Θ) − η·E`
    pub total: f64,
    /// `‖A‖² / 2M`
    pub value_loss: f64,
    /// `−(1/M) Σ A log π`
    pub policy_loss: f64,
    /// Batch-mean entropy term.
    pub entropy: f64,
    pub grads: Gradients,
    /// `A = Q − V`, treated as constant in the policy loss.
    pub advantages: Vec<f64>,
    /// `∂ log π / ∂(head pre-activation)` per sample; the Gaussian head's mean block only.
    pub scores: Mat,
    pub pass: ForwardPass,
}

/// Evaluates the A2C loss on `obs`/`actions` with targets `q` and backpropagates it.
///
/// The entropy enters as a bonus: minimising the total loss raises the entropy.
pub fn loss_eval(
    net: &ActorCritic,
    obs: &Mat,
    actions: &Actions,
    q: &[f64],
    eta: f64,
    mode: EntropyMode,
) -> Result<LossEval> {
    evaluate(net, obs, actions, q, None, eta, mode)
}

/// Total loss with the advantages in the policy term held at `advantages`.
///
/// This is the function whose gradient [`loss_eval`] returns, and is what a
/// finite-difference check should perturb.
pub fn total_loss_fixed_advantage(
    net: &ActorCritic,
    obs: &Mat,
    actions: &Actions,
    q: &[f64],
    advantages: &[f64],
    eta: f64,
    mode: EntropyMode,
) -> Result<f64> {
    Ok(evaluate(net, obs, actions, q, Some(advantages), eta, mode)?.total)
}

fn evaluate(
    net: &ActorCritic,
    obs: &Mat,
    actions: &Actions,
    q: &[f64],
    fixed: Option<&[f64]>,
    eta: f64,
    mode: EntropyMode,
) -> Result<LossEval> {
    let m = obs.rows();
    if q.len() != m || actions.len() != m || m == 0 {
        return Err(Error::Dimension(format!(
            "loss on {m} observations, {} targets, {} actions",
            q.len(),
            actions.len()
        )));
    }
    let pass = net.forward(obs)?;
    let mf = m as f64;
    let advantages: Vec<f64> = q.iter().zip(&pass.values).map(|(q, v)| q - v).collect();
    let value_loss = advantages.iter().map(|a| a * a).sum::<f64>() / (2.0 * mf);
    let d_values: Vec<f64> = advantages.iter().map(|a| -a / mf).collect();
    let pa = fixed.unwrap_or(&advantages);

    let (policy_loss, entropy, scores, d_head, d_log_std) = match (net.spec().head, actions) {
        (HeadKind::Softmax { .. }, Actions::Discrete(a)) => {
            let logp = softmax_logprob(&pass.head, a)?;
            let scores = softmax_score(&pass.head, a)?;
            let (ent, ent_grad) = softmax_entropy_with_grad(&pass.head, a, mode)?;
            let policy_loss = -pa.iter().zip(&logp).map(|(a, l)| a * l).sum::<f64>() / mf;
            let entropy = ent.iter().sum::<f64>() / mf;
            let d_head = Mat::from_fn(m, scores.cols(), |i, j| {
                (-pa[i] * scores[(i, j)] - eta * ent_grad[(i, j)]) / mf
            });
            (policy_loss, entropy, scores, d_head, None)
        }
        (HeadKind::Gaussian { .. }, Actions::Continuous(a)) => {
            let log_std = net.log_std.as_deref().expect("Gaussian head has log-std");
            let logp = gaussian_logprob(&pass.head, log_std, a)?;
            let scores = gaussian_score_mean(&pass.head, log_std, a)?;
            let s_std = gaussian_score_log_std(&pass.head, log_std, a)?;
            let policy_loss = -pa.iter().zip(&logp).map(|(a, l)| a * l).sum::<f64>() / mf;
            // Closed-form entropy; independent of the state, its gradient is 1 per log-std.
            let entropy = gaussian_entropy(log_std);
            let d_head = Mat::from_fn(m, scores.cols(), |i, j| -pa[i] * scores[(i, j)] / mf);
            let d_ls: Vec<f64> = (0..log_std.len())
                .map(|j| -(0..m).map(|i| pa[i] * s_std[(i, j)]).sum::<f64>() / mf - eta)
                .collect();
            (policy_loss, entropy, scores, d_head, Some(d_ls))
        }
        _ => {
            return Err(Error::InvalidAction(
                "action kind does not match the policy head".into(),
            ))
        }
    };

    let mut grads = net.backward(&pass, &d_values, &d_head)?;
    grads.log_std = d_log_std;
    let total = value_loss + policy_loss - eta * entropy;
    Ok(LossEval {
        total,
        value_loss,
        policy_loss,
        entropy,
        grads,
        advantages,
        scores,
        pass,
    })
}

/// Scales all gradients jointly so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let mut buffers = grads.buffers_mut();
    l2_clip(&mut buffers, max_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, NetSpec};

    fn net(head: HeadKind) -> ActorCritic {
        let mut n = ActorCritic::new(NetSpec::mlp(3, head, &[4], Activation::Tanh, true)).unwrap();
        n.init_params(1);
        n
    }

    #[test]
    fn value_loss_by_hand() {
        let mut n = net(HeadKind::Softmax { actions: 2 });
        // Zero value head: V = 0, so A = Q.
        n.layer_mut(1).weight = Mat::zeros(4, 1);
        let obs = Mat::from_fn(2, 3, |i, j| (i + j) as f64 * 0.1);
        let out = loss_eval(
            &n,
            &obs,
            &Actions::Discrete(vec![0, 1]),
            &[1.0, -1.0],
            0.0,
            EntropyMode::Full,
        )
        .unwrap();
        assert!((out.value_loss - 0.5).abs() < 1e-15);
    }

    #[test]
    fn policy_loss_single_sample() {
        let mut n = net(HeadKind::Softmax { actions: 2 });
        n.layer_mut(1).weight = Mat::zeros(4, 1);
        n.layer_mut(2).weight = Mat::zeros(4, 2);
        let obs = Mat::from_vec(1, 3, vec![0.3, 0.1, -0.2]).unwrap();
        let out = loss_eval(
            &n,
            &obs,
            &Actions::Discrete(vec![1]),
            &[2.0],
            0.0,
            EntropyMode::Full,
        )
        .unwrap();
        assert!((out.policy_loss - 1.386294).abs() < 1e-6);
        assert!((out.policy_loss + 2.0 * 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn clipping_reports_pre_clip_norm() {
        let n = net(HeadKind::Softmax { actions: 2 });
        let obs = Mat::from_fn(5, 3, |i, j| (i as f64 - j as f64) * 0.7);
        let mut out = loss_eval(
            &n,
            &obs,
            &Actions::Discrete(vec![0, 1, 1, 0, 1]),
            &[30.0; 5],
            0.01,
            EntropyMode::Full,
        )
        .unwrap();
        let before = out.grads.norm();
        let reported = clip_gradients(&mut out.grads, 0.5);
        assert!((before - reported).abs() < 1e-12);
        assert!(before > 0.5);
        assert!((out.grads.norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mismatched_actions_are_rejected() {
        let n = net(HeadKind::Softmax { actions: 2 });
        let obs = Mat::zeros(1, 3);
        let a = Actions::Continuous(Mat::zeros(1, 2));
        assert!(loss_eval(&n, &obs, &a, &[0.0], 0.0, EntropyMode::Full).is_err());
    }
}
