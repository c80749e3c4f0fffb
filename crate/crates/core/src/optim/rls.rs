use crate::error::{Error, Result};
use crate::numerics::{Mat, SpdMat};

/// Per-layer RLS state: inverse autocorrelation `P`, velocity `Φ`, momentum
/// factor `β` and forgetting factor `λ`.
///
/// Every step computes the parameter update from the pre-update `P_t` and
/// only then advances `P`.
#[derive(Clone, Debug, PartialEq)]
pub struct RlsLayerState {
    pub p: SpdMat,
    pub velocity: Mat,
    pub beta: f64,
    pub lambda: f64,
}

/// Diagnostics of one RLS update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RlsStepInfo {
    /// Smallest `λ + k·xᵀPx` seen in the update.
    pub min_denominator: f64,
}

impl RlsLayerState {
    /// `P₀ = I` of size `input_dim`; velocity shaped like the `rows × cols` parameter.
    pub fn new(input_dim: usize, rows: usize, cols: usize, beta: f64, lambda: f64) -> Self {
        RlsLayerState {
            p: SpdMat::identity(input_dim),
            velocity: Mat::zeros(rows, cols),
            beta,
            lambda,
        }
    }

    /// `x̄ = mean_i X_(i,:)`, then `P ← SM(P, x̄, k, λ)`.
    pub fn p_update_fc(&mut self, x: &Mat, k: f64) -> Result<f64> {
        let xbar = x.col_mean();
        self.p.rank_one_update(&xbar, k, self.lambda)
    }

    /// Critic output layer: `Ψ ← Ψ − P g / (λ + k x̄ᵀ P x̄)`, then the `P` update.
    pub fn critic_output_step(
        &mut self,
        weight: &mut Mat,
        grad: &Mat,
        x: &Mat,
        k: f64,
    ) -> Result<RlsStepInfo> {
        self.fc_hidden_step(weight, grad, x, k, 1.0)
    }

    /// Fully-connected hidden layer: `W ← W − μ P g / (λ + k x̄ᵀ P x̄)`, then the `P` update.
    pub fn fc_hidden_step(
        &mut self,
        weight: &mut Mat,
        grad: &Mat,
        x: &Mat,
        k: f64,
        mu: f64,
    ) -> Result<RlsStepInfo> {
        self.check_param(weight, grad)?;
        if x.cols() != self.p.dim() {
            return Err(Error::Dimension(format!(
                "layer input width {} for P of size {}",
                x.cols(),
                self.p.dim()
            )));
        }
        let pg = self.p.as_mat().matmul(grad)?;
        // The rank-one update reports λ + k x̄ᵀ P_t x̄ evaluated before P changes.
        let denom = self.p_update_fc(x, k)?;
        let step = pg.scaled(-mu / denom);
        self.apply(weight, &step)?;
        Ok(RlsStepInfo {
            min_denominator: denom,
        })
    }

    /// Conv layer `P` update from the batch-mean unfolded input `X̄` (`C·Hᵏ·Wᵏ × H·W`):
    /// `P ← (1/λ)(P − (k/HW) Σ_j P X̄_j X̄_jᵀ P / (λ + k X̄_jᵀ P X̄_j))`.
    pub fn conv_p_update(&mut self, mean_cols: &Mat, k: f64) -> Result<Vec<f64>> {
        if mean_cols.rows() != self.p.dim() {
            return Err(Error::Dimension(format!(
                "unfolded input with {} rows for P of size {}",
                mean_cols.rows(),
                self.p.dim()
            )));
        }
        self.p
            .averaged_rank_one_update(&mean_cols.transpose(), k, self.lambda)
    }

    /// Conv layer step on the reshaped kernel `o(Θ)`:
    /// `o(Θ) ← o(Θ) − μ·HW·P·o(g) / Σ_j (λ + k X̄_jᵀ P X̄_j)`, then the `P` update.
    pub fn conv_step(
        &mut self,
        weight: &mut Mat,
        grad: &Mat,
        mean_cols: &Mat,
        k: f64,
        mu: f64,
    ) -> Result<RlsStepInfo> {
        self.check_param(weight, grad)?;
        let pixels = mean_cols.cols() as f64;
        let pg = self.p.as_mat().matmul(grad)?;
        let denoms = self.conv_p_update(mean_cols, k)?;
        let total: f64 = denoms.iter().sum();
        let step = pg.scaled(-mu * pixels / total);
        self.apply(weight, &step)?;
        Ok(RlsStepInfo {
            min_denominator: denoms.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }

    fn check_param(&self, weight: &Mat, grad: &Mat) -> Result<()> {
        if weight.shape() != grad.shape()
            || weight.shape() != self.velocity.shape()
            || weight.rows() != self.p.dim()
        {
            return Err(Error::Dimension(format!(
                "parameter {:?}, gradient {:?}, velocity {:?}, P {}",
                weight.shape(),
                grad.shape(),
                self.velocity.shape(),
                self.p.dim()
            )));
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("layer gradient".into()));
        }
        Ok(())
    }

    fn apply(&mut self, weight: &mut Mat, step: &Mat) -> Result<()> {
        let applied = momentum_wrap(&mut self.velocity, self.beta, step)?;
        weight.add_scaled(1.0, applied)
    }
}

/// `Φ ← βΦ + step`; the caller adds the returned `Φ` to the parameter.
///
/// `step` is the signed update (already negative for descent), so `β = 0`
/// reproduces the plain rule.
pub fn momentum_wrap<'a>(velocity: &'a mut Mat, beta: f64, step: &Mat) -> Result<&'a Mat> {
    if velocity.shape() != step.shape() {
        return Err(Error::Dimension(format!(
            "velocity {:?} for step {:?}",
            velocity.shape(),
            step.shape()
        )));
    }
    if beta == 0.0 {
        velocity.data_mut().copy_from_slice(step.data());
    } else {
        velocity.scale(beta);
        velocity.add_scaled(1.0, step)?;
    }
    Ok(velocity)
}
