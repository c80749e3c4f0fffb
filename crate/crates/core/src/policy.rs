//! Softmax and Gaussian policy heads.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::Mat;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// How the entropy regulariser is evaluated for Softmax heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EntropyMode {
    /// `−Σ_a π(a|s) log π(a|s)` over the whole action set.
    #[default]
    Full,
    /// `−π(a|s) log π(a|s)` at the sampled action only.
    Sampled,
}

/// Actions of a batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Actions {
    Discrete(Vec<usize>),
    /// `M × dim`
    Continuous(Mat),
}

impl Actions {
    pub fn len(&self) -> usize {
        match self {
            Actions::Discrete(a) => a.len(),
            Actions::Continuous(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn check_actions(logits: &Mat, actions: &[usize]) -> Result<()> {
    if actions.len() != logits.rows() {
        return Err(Error::Dimension(format!(
            "{} actions for {} logit rows",
            actions.len(),
            logits.rows()
        )));
    }
    if let Some(&a) = actions.iter().find(|&&a| a >= logits.cols()) {
        return Err(Error::InvalidAction(format!(
            "index {a} with {} actions",
            logits.cols()
        )));
    }
    Ok(())
}

/// `log π(a|s)` per sample.
pub fn softmax_logprob(logits: &Mat, actions: &[usize]) -> Result<Vec<f64>> {
    check_actions(logits, actions)?;
    Ok((0..logits.rows())
        .map(|i| log_softmax_row(logits.row(i))[actions[i]])
        .collect())
}

/// Full-distribution entropy per sample.
pub fn softmax_entropy(logits: &Mat) -> Vec<f64> {
    (0..logits.rows())
        .map(|i| {
            let lp = log_softmax_row(logits.row(i));
            -lp.iter().map(|l| l.exp() * l).sum::<f64>()
        })
        .collect()
}

/// `G^Z` rows: `onehot(a) − softmax(z)`.
pub fn softmax_score(logits: &Mat, actions: &[usize]) -> Result<Mat> {
    check_actions(logits, actions)?;
    let mut g = softmax(logits);
    g.scale(-1.0);
    for (i, &a) in actions.iter().enumerate() {
        g[(i, a)] += 1.0;
    }
    Ok(g)
}

/// Per-sample entropy term under `mode` and its gradient with respect to the logits.
pub fn softmax_entropy_with_grad(
    logits: &Mat,
    actions: &[usize],
    mode: EntropyMode,
) -> Result<(Vec<f64>, Mat)> {
    check_actions(logits, actions)?;
    let (m, n) = logits.shape();
    let mut values = Vec::with_capacity(m);
    let mut grad = Mat::zeros(m, n);
    for i in 0..m {
        let lp = log_softmax_row(logits.row(i));
        let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        match mode {
            EntropyMode::Full => {
                let h = -p.iter().zip(&lp).map(|(p, l)| p * l).sum::<f64>();
                values.push(h);
                // ∂H/∂z_j = −p_j (log p_j + H)
                for j in 0..n {
                    grad[(i, j)] = -p[j] * (lp[j] + h);
                }
            }
            EntropyMode::Sampled => {
                let a = actions[i];
                values.push(-p[a] * lp[a]);
                // ∂/∂z_j [−p_a log p_a] = −(log p_a + 1) p_a (δ_aj − p_j)
                let c = -(lp[a] + 1.0) * p[a];
                for j in 0..n {
                    let delta = if j == a { 1.0 } else { 0.0 };
                    grad[(i, j)] = c * (delta - p[j]);
                }
            }
        }
    }
    Ok((values, grad))
}

fn check_gaussian(mean: &Mat, log_std: &[f64], actions: &Mat) -> Result<()> {
    if mean.cols() != log_std.len() || mean.shape() != actions.shape() {
        return Err(Error::Dimension(format!(
            "Gaussian head with mean {:?}, log-std {} and actions {:?}",
            mean.shape(),
            log_std.len(),
            actions.shape()
        )));
    }
    Ok(())
}

/// `Σ_d [−(a_d−μ_d)²/(2σ_d²) − log σ_d − ½ log 2π]` per sample.
pub fn gaussian_logprob(mean: &Mat, log_std: &[f64], actions: &Mat) -> Result<Vec<f64>> {
    check_gaussian(mean, log_std, actions)?;
    Ok((0..mean.rows())
        .map(|i| {
            mean.row(i)
                .iter()
                .zip(actions.row(i))
                .zip(log_std)
                .map(|((&mu, &a), &ls)| {
                    let z = (a - mu) * (-ls).exp();
                    -0.5 * z * z - ls - HALF_LN_2PI
                })
                .sum()
        })
        .collect())
}

/// `Σ_d ½ ln(2πe σ_d²)`
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| 0.5 + HALF_LN_2PI + ls).sum()
}

/// Mean-block score `(a − μ)/σ²`, the Gaussian `G^Z`.
pub fn gaussian_score_mean(mean: &Mat, log_std: &[f64], actions: &Mat) -> Result<Mat> {
    check_gaussian(mean, log_std, actions)?;
    let mut g = actions.sub(mean)?;
    for i in 0..g.rows() {
        for (v, ls) in g.row_mut(i).iter_mut().zip(log_std) {
            *v *= (-2.0 * ls).exp();
        }
    }
    Ok(g)
}

/// Score with respect to log-std: `(a − μ)²/σ² − 1`.
pub fn gaussian_score_log_std(mean: &Mat, log_std: &[f64], actions: &Mat) -> Result<Mat> {
    check_gaussian(mean, log_std, actions)?;
    let mut g = actions.sub(mean)?;
    for i in 0..g.rows() {
        for (v, ls) in g.row_mut(i).iter_mut().zip(log_std) {
            let z = *v * (-ls).exp();
            *v = z * z - 1.0;
        }
    }
    Ok(g)
}

/// Policy head output ready for sampling.
#[derive(Clone, Copy, Debug)]
pub enum PolicyHead<'a> {
    Softmax { logits: &'a Mat },
    Gaussian { mean: &'a Mat, log_std: &'a [f64] },
}

impl PolicyHead<'_> {
    /// Draws the action of row `i` using `rng`.
    pub fn sample_row<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> ActionValue {
        match *self {
            PolicyHead::Softmax { logits } => {
                let lp = log_softmax_row(logits.row(i));
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = lp.len() - 1;
                for (a, l) in lp.iter().enumerate() {
                    acc += l.exp();
                    if u < acc {
                        chosen = a;
                        break;
                    }
                }
                ActionValue::Discrete(chosen)
            }
            PolicyHead::Gaussian { mean, log_std } => ActionValue::Continuous(
                mean.row(i)
                    .iter()
                    .zip(log_std)
                    .map(|(&mu, &ls)| {
                        let eps: f64 = StandardNormal.sample(rng);
                        mu + ls.exp() * eps
                    })
                    .collect(),
            ),
        }
    }

    /// Mode of the distribution at row `i`.
    pub fn greedy_row(&self, i: usize) -> ActionValue {
        match *self {
            PolicyHead::Softmax { logits } => {
                let row = logits.row(i);
                let best = (0..row.len()).fold(0, |b, a| if row[a] > row[b] { a } else { b });
                ActionValue::Discrete(best)
            }
            PolicyHead::Gaussian { mean, .. } => ActionValue::Continuous(mean.row(i).to_vec()),
        }
    }

    /// Samples every row; row `i` draws from `rngs[i]`.
    pub fn sample<R: Rng>(&self, rngs: &mut [R]) -> Actions {
        let rows: Vec<ActionValue> = rngs
            .iter_mut()
            .enumerate()
            .map(|(i, r)| self.sample_row(i, r))
            .collect();
        collect_actions(rows)
    }
}

/// A single action.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionValue {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// Packs per-sample actions into a batch; all entries must be the same variant.
pub fn collect_actions(rows: Vec<ActionValue>) -> Actions {
    match rows.first() {
        Some(ActionValue::Continuous(first)) => {
            let dim = first.len();
            let mut data = Vec::with_capacity(rows.len() * dim);
            for r in &rows {
                match r {
                    ActionValue::Continuous(v) => data.extend_from_slice(v),
                    ActionValue::Discrete(_) => panic!("mixed action kinds"),
                }
            }
            Actions::Continuous(Mat::from_vec(rows.len(), dim, data).expect("uniform action width"))
        }
        _ => Actions::Discrete(
            rows.into_iter()
                .map(|r| match r {
                    ActionValue::Discrete(a) => a,
                    ActionValue::Continuous(_) => panic!("mixed action kinds"),
                })
                .collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn row(v: &[f64]) -> Mat {
        Mat::from_vec(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn logprob_examples() {
        let lp = softmax_logprob(&row(&[0.0, 0.0]), &[0]).unwrap();
        assert!((lp[0] - 0.5f64.ln()).abs() < 1e-15);
        let lp = softmax_logprob(&row(&[1000.0, 0.0]), &[0]).unwrap();
        assert!(lp[0].abs() < 1e-12 && lp[0].is_finite());
        assert!(matches!(
            softmax_logprob(&row(&[0.0, 0.0]), &[2]),
            Err(Error::InvalidAction(_))
        ));
    }

    #[test]
    fn entropy_examples() {
        assert!((softmax_entropy(&row(&[0.0, 0.0]))[0] - 2f64.ln()).abs() < 1e-15);
        assert!(softmax_entropy(&row(&[60.0, 0.0, 0.0]))[0] < 1e-20);
        // logits ln 2, 0 give probabilities 2/3, 1/3
        let h = softmax_entropy(&row(&[2f64.ln(), 0.0]))[0];
        assert!((h - (3f64.ln() - 2.0 / 3.0 * 2f64.ln())).abs() < 1e-12);
        assert!((h - 0.636514).abs() < 1e-6);
    }

    #[test]
    fn score_examples() {
        let g = softmax_score(&row(&[0.0, 0.0]), &[0]).unwrap();
        assert_eq!(g.data(), &[0.5, -0.5]);
        let g = softmax_score(&row(&[50.0, 0.0, 0.0]), &[0]).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn gaussian_examples() {
        let m = row(&[0.0]);
        let lp = gaussian_logprob(&m, &[0.0], &row(&[0.0])).unwrap();
        assert!((lp[0] + 0.918939).abs() < 1e-6);
        let lp = gaussian_logprob(&row(&[0.3, -0.2]), &[1.0, 1.0], &row(&[0.3, -0.2])).unwrap();
        assert!((lp[0] - 2.0 * (-1.0 - HALF_LN_2PI)).abs() < 1e-14);
        assert!((gaussian_entropy(&[0.0]) - 1.418939).abs() < 1e-6);
        let doubled = gaussian_entropy(&[2f64.ln()]) - gaussian_entropy(&[0.0]);
        assert!((doubled - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn one_hot_always_sampled_and_tiny_sigma_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = row(&[-800.0, 0.0, -800.0]);
        let head = PolicyHead::Softmax { logits: &logits };
        for _ in 0..1000 {
            assert_eq!(head.sample_row(0, &mut rng), ActionValue::Discrete(1));
        }
        let mean = row(&[0.25, -1.5]);
        let head = PolicyHead::Gaussian {
            mean: &mean,
            log_std: &[-60.0, -60.0],
        };
        let ActionValue::Continuous(a) = head.sample_row(0, &mut rng) else {
            panic!()
        };
        assert!((a[0] - 0.25).abs() < 1e-20 && (a[1] + 1.5).abs() < 1e-20);
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let logits = row(&[0.0; 4]);
        let head = PolicyHead::Softmax { logits: &logits };
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws {
            let ActionValue::Discrete(a) = head.sample_row(0, &mut rng) else {
                panic!()
            };
            counts[a] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 0.01);
        }
    }
}
