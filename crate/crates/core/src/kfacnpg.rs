//! K-FAC natural-gradient learner for the actor output layer.
//!
//! The layer's Fisher block is approximated by `H⁽¹⁾ ⊗ H⁽²⁾`, with the inverse
//! factors `P⁽¹⁾` (layer input) and `P⁽²⁾` (policy score) tracked by averaged
//! Sherman–Morrison recursions. The compatible parameter `w`, stored as the
//! matrix `m(w)` with the same shape as the layer weight, is fitted to the
//! advantages by a Kronecker-preconditioned RLS step and then used as the
//! natural gradient: `Θ ← Θ + α m(w)`.

use crate::error::{Error, Result};
use crate::numerics::{dot, Mat, SpdMat};
use crate::optim::LinearDecay;

/// Sign of the residual factor in the compatible-parameter step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WSign {
    /// Step that decreases `(A − wᵀG)²`.
    #[default]
    Descent,
    /// Residual factor taken with a positive sign as displayed in the derivation.
    Literal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KfacActorState {
    pub p1: SpdMat,
    pub p2: SpdMat,
    /// `m(w)`, `N_{l−1} × N_l`.
    pub w: Mat,
    pub alpha: LinearDecay,
    pub lambda: f64,
    pub sign: WSign,
}

/// Denominator diagnostics of one K-FAC step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KfacStepInfo {
    pub min_denominator_p1: f64,
    pub min_denominator_p2: f64,
}

impl KfacActorState {
    pub fn new(inputs: usize, outputs: usize, alpha: LinearDecay, lambda: f64) -> Self {
        KfacActorState {
            p1: SpdMat::identity(inputs),
            p2: SpdMat::identity(outputs),
            w: Mat::zeros(inputs, outputs),
            alpha,
            lambda,
            sign: WSign::Descent,
        }
    }

    /// Averaged per-sample update of `P⁽¹⁾` from the layer inputs (rows of `x`).
    pub fn p1_update(&mut self, x: &Mat, k: f64) -> Result<Vec<f64>> {
        self.p1.averaged_rank_one_update(x, k, self.lambda)
    }

    /// Averaged per-sample update of `P⁽²⁾` from the scores (rows of `gz`).
    pub fn p2_update(&mut self, gz: &Mat, k: f64) -> Result<Vec<f64>> {
        self.p2.averaged_rank_one_update(gz, k, self.lambda)
    }

    /// Mean of `(A_i − Ã_i)²` over the batch.
    pub fn residual(&self, x: &Mat, gz: &Mat, advantages: &[f64]) -> Result<f64> {
        self.check_batch(x, gz, advantages)?;
        let m = x.rows();
        let s: f64 = (0..m)
            .map(|i| {
                let r = advantages[i] - compatible_advantage(&self.w, x.row(i), gz.row(i));
                r * r
            })
            .sum();
        Ok(s / m as f64)
    }

    /// One compatible-parameter step followed by the factor updates.
    ///
    /// The step and both denominators use the pre-update `P⁽¹⁾`, `P⁽²⁾`:
    /// `w ← w − vec(P⁽¹⁾ m(Ḡʷ) P⁽²⁾)`, `Gʷ_i = −(A_i − wᵀG_i) G_i / (d¹_i d²_i)`.
    pub fn w_update(
        &mut self,
        x: &Mat,
        gz: &Mat,
        advantages: &[f64],
        k: f64,
    ) -> Result<KfacStepInfo> {
        self.check_batch(x, gz, advantages)?;
        let m = x.rows();
        let p1 = self.p1.as_mat().clone();
        let p2 = self.p2.as_mat().clone();
        let d1 = self.p1_update(x, k)?;
        let d2 = self.p2_update(gz, k)?;

        let sign = match self.sign {
            WSign::Descent => -1.0,
            WSign::Literal => 1.0,
        };
        // avg Gʷ = (1/M) Xᵀ diag(c) G with c_i = ±r_i/(d¹_i d²_i)
        let mut scaled = gz.clone();
        for i in 0..m {
            let r = advantages[i] - compatible_advantage(&self.w, x.row(i), gz.row(i));
            let c = sign * r / (d1[i] * d2[i] * m as f64);
            scaled.row_mut(i).iter_mut().for_each(|v| *v *= c);
        }
        let gw = x.t_matmul(&scaled)?;
        let step = p1.matmul(&gw)?.matmul(&p2)?;
        self.w.add_scaled(-1.0, &step)?;
        if !self.w.is_finite() {
            return Err(Error::NonFinite("compatible parameter w".into()));
        }
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(KfacStepInfo {
            min_denominator_p1: min(&d1),
            min_denominator_p2: min(&d2),
        })
    }

    /// `Θ ← Θ + α m(w)`.
    pub fn npg_actor_step(&self, theta: &mut Mat, alpha: f64) -> Result<()> {
        theta.add_scaled(alpha, &self.w)
    }

    pub fn alpha_schedule(&self, timesteps: u64) -> f64 {
        self.alpha.value(timesteps)
    }

    fn check_batch(&self, x: &Mat, gz: &Mat, advantages: &[f64]) -> Result<()> {
        if x.rows() != gz.rows()
            || x.rows() != advantages.len()
            || x.cols() != self.p1.dim()
            || gz.cols() != self.p2.dim()
        {
            return Err(Error::Dimension(format!(
                "K-FAC batch: inputs {:?}, scores {:?}, {} advantages for factors {}×{}",
                x.shape(),
                gz.shape(),
                advantages.len(),
                self.p1.dim(),
                self.p2.dim()
            )));
        }
        Ok(())
    }
}

/// `Ã = wᵀ vec(x gᵀ) = xᵀ m(w) g`, without forming the outer product.
pub fn compatible_advantage(w: &Mat, x: &[f64], g: &[f64]) -> f64 {
    debug_assert_eq!(w.shape(), (x.len(), g.len()));
    x.iter()
        .enumerate()
        .map(|(i, xi)| xi * dot(w.row(i), g))
        .sum()
}

/// Atari default: 0.01, minus 0.002 every 5000 timesteps, floored at 0.001.
pub fn default_alpha_schedule() -> LinearDecay {
    LinearDecay::new(0.01, 0.002, 5000, 0.001)
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::vec_rowmajor;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
        Mat::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
    }

    fn to_na(m: &Mat) -> DMatrix<f64> {
        DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
    }

    #[test]
    fn zero_inputs_scale_factors() {
        let mut s = KfacActorState::new(3, 2, default_alpha_schedule(), 0.5);
        s.p1_update(&Mat::zeros(4, 3), 0.1).unwrap();
        s.p2_update(&Mat::zeros(4, 2), 0.1).unwrap();
        assert!(s.p1.as_mat().max_abs_diff(&Mat::identity(3).scaled(2.0)) < 1e-15);
        assert!(s.p2.as_mat().max_abs_diff(&Mat::identity(2).scaled(2.0)) < 1e-15);
    }

    #[test]
    fn single_sample_update_matches_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (k, lambda) = (0.3, 0.97);
        let mut s = KfacActorState::new(4, 3, default_alpha_schedule(), lambda);
        for _ in 0..5 {
            s.p1_update(&random(&mut rng, 6, 4, 1.0), k).unwrap();
            s.p2_update(&random(&mut rng, 6, 3, 1.0), k).unwrap();
        }
        let x = random(&mut rng, 1, 4, 1.0);
        let g = random(&mut rng, 1, 3, 1.0);
        let check = |p: &SpdMat, v: &Mat, after: &SpdMat| {
            let pv = to_na(p.as_mat());
            let vv = DMatrix::from_row_slice(v.cols(), 1, v.data());
            let h = pv.try_inverse().unwrap() * lambda + &vv * vv.transpose() * k;
            let expected = h.try_inverse().unwrap();
            let got = to_na(after.as_mat());
            assert!((got - expected).abs().max() < 1e-10);
        };
        let before = s.clone();
        s.p1_update(&x, k).unwrap();
        s.p2_update(&g, k).unwrap();
        check(&before.p1, &x, &s.p1);
        check(&before.p2, &g, &s.p2);
        assert!(s.p2.symmetry_error() < 1e-9);
    }

    #[test]
    fn factors_stay_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = KfacActorState::new(5, 3, default_alpha_schedule(), 0.999);
        for _ in 0..500 {
            s.p1_update(&random(&mut rng, 8, 5, 3.0), 0.1).unwrap();
            s.p2_update(&random(&mut rng, 8, 3, 3.0), 0.1).unwrap();
        }
        for p in [&s.p1, &s.p2] {
            let eig = to_na(p.as_mat()).symmetric_eigen().eigenvalues;
            assert!(eig.min() > 0.0);
        }
    }

    #[test]
    fn compatible_advantage_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(compatible_advantage(&Mat::zeros(4, 3), &x, &g), 0.0);

        let outer = Mat::from_fn(4, 3, |i, j| x[i] * g[j]);
        let nx: f64 = x.iter().map(|v| v * v).sum();
        let ng: f64 = g.iter().map(|v| v * v).sum();
        assert!((compatible_advantage(&outer, &x, &g) - nx * ng).abs() < 1e-12);

        let w = random(&mut rng, 4, 3, 1.0);
        let explicit = dot(&vec_rowmajor(&w), &vec_rowmajor(&outer));
        assert!((compatible_advantage(&w, &x, &g) - explicit).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_keeps_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut s = KfacActorState::new(3, 2, default_alpha_schedule(), 1.0);
        s.w = random(&mut rng, 3, 2, 1.0);
        let x = random(&mut rng, 5, 3, 1.0);
        let g = random(&mut rng, 5, 2, 1.0);
        let a: Vec<f64> = (0..5)
            .map(|i| compatible_advantage(&s.w, x.row(i), g.row(i)))
            .collect();
        let w0 = s.w.clone();
        s.w_update(&x, &g, &a, 0.1).unwrap();
        assert!(s.w.max_abs_diff(&w0) < 1e-15);
    }

    #[test]
    fn identity_factors_single_sample_is_lms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = KfacActorState::new(3, 2, default_alpha_schedule(), 1.0);
        s.w = random(&mut rng, 3, 2, 1.0);
        let x = random(&mut rng, 1, 3, 1.0);
        let g = random(&mut rng, 1, 2, 1.0);
        let a = [0.7];
        let r = a[0] - compatible_advantage(&s.w, x.row(0), g.row(0));
        let expected = Mat::from_fn(3, 2, |i, j| s.w[(i, j)] + r * x[(0, i)] * g[(0, j)]);
        s.w_update(&x, &g, &a, 0.0).unwrap();
        assert!(s.w.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn frozen_batch_residual_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (m, n_in, n_out) = (40, 6, 3);
        let mut s = KfacActorState::new(n_in, n_out, default_alpha_schedule(), 1.0);
        let x = random(&mut rng, m, n_in, 0.5);
        let g = random(&mut rng, m, n_out, 0.5);
        let a: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut prev = s.residual(&x, &g, &a).unwrap();
        for _ in 0..50 {
            s.w_update(&x, &g, &a, 0.1).unwrap();
            let r = s.residual(&x, &g, &a).unwrap();
            assert!(r < prev, "{r} !< {prev}");
            prev = r;
        }
    }

    #[test]
    fn literal_sign_increases_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = KfacActorState::new(4, 2, default_alpha_schedule(), 1.0);
        s.sign = WSign::Literal;
        let x = random(&mut rng, 20, 4, 0.5);
        let g = random(&mut rng, 20, 2, 0.5);
        let a: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let before = s.residual(&x, &g, &a).unwrap();
        s.w_update(&x, &g, &a, 0.1).unwrap();
        assert!(s.residual(&x, &g, &a).unwrap() > before);
    }

    #[test]
    fn npg_step_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = KfacActorState::new(3, 2, default_alpha_schedule(), 1.0);
        let mut theta = random(&mut rng, 3, 2, 1.0);
        let t0 = theta.clone();
        s.npg_actor_step(&mut theta, 0.01).unwrap();
        assert_eq!(theta, t0);
        s.w = random(&mut rng, 3, 2, 1.0);
        s.npg_actor_step(&mut theta, 0.0).unwrap();
        assert_eq!(theta, t0);
        s.npg_actor_step(&mut theta, 0.01).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert!((theta[(i, j)] - (t0[(i, j)] + 0.01 * s.w[(i, j)])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn alpha_schedule_values() {
        let s = KfacActorState::new(1, 1, default_alpha_schedule(), 1.0);
        assert_eq!(s.alpha_schedule(0), 0.01);
        assert!((s.alpha_schedule(5000) - 0.008).abs() < 1e-15);
        assert_eq!(s.alpha_schedule(1_000_000), 0.001);
    }
}
