use crate::error::{Error, Result};
use crate::numerics::{dot, Mat};

/// Symmetric positive definite matrix, used for every inverse-autocorrelation
/// factor `P`. Updates keep it exactly symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMat(Mat);

impl SpdMat {
    pub fn identity(n: usize) -> Self {
        SpdMat(Mat::identity(n))
    }

    /// Wraps `m` after checking squareness, symmetry and a Cholesky factorisation.
    pub fn new(mut m: Mat) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::Dimension(format!(
                "SPD matrix must be square, got {:?}",
                m.shape()
            )));
        }
        if symmetry_error(&m) > 1e-9 {
            return Err(Error::NotPositiveDefinite("matrix is not symmetric".into()));
        }
        m.symmetrize();
        let out = SpdMat(m);
        if !out.is_positive_definite() {
            return Err(Error::NotPositiveDefinite(
                "Cholesky factorisation failed".into(),
            ));
        }
        Ok(out)
    }

    /// Wraps `m` without any checks. Used when restoring trusted state.
    pub(crate) fn from_mat_unchecked(m: Mat) -> Self {
        SpdMat(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.mul_vec(x)
    }

    /// `xᵀ P x`
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        Ok(dot(x, &self.0.mul_vec(x)?))
    }

    pub fn symmetry_error(&self) -> f64 {
        symmetry_error(&self.0)
    }

    /// True when a Cholesky factorisation succeeds, i.e. every eigenvalue is positive.
    pub fn is_positive_definite(&self) -> bool {
        let n = self.dim();
        let a = self.0.data();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for p in 0..j {
                d -= l[j * n + p] * l[j * n + p];
            }
            if !(d > 0.0) || !d.is_finite() {
                return false;
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = a[i * n + j];
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p];
                }
                l[i * n + j] = s / d;
            }
        }
        true
    }

    /// In-place `P ← (1/λ)(P − k P x xᵀ P / (λ + k xᵀ P x))`.
    ///
    /// Returns the denominator `λ + k xᵀ P x`.
    pub fn rank_one_update(&mut self, x: &[f64], k: f64, lambda: f64) -> Result<f64> {
        check_input(self.dim(), x)?;
        let u = self.0.mul_vec(x)?;
        let denom = checked_denominator(lambda, k * dot(x, &u))?;
        let n = self.dim();
        let c = k / denom;
        let inv_lambda = 1.0 / lambda;
        let data = self.0.data_mut();
        for i in 0..n {
            let cu = c * u[i];
            let row = &mut data[i * n..(i + 1) * n];
            for (r, &uj) in row.iter_mut().zip(&u) {
                *r = (*r - cu * uj) * inv_lambda;
            }
        }
        self.0.symmetrize();
        Ok(denom)
    }

    /// Averages the Sherman–Morrison corrections of several inputs, all taken
    /// against the same pre-update `P`:
    ///
    /// `P ← (1/λ)(P − (k/n) Σ_i P x_i x_iᵀ P / (λ + k x_iᵀ P x_i))`.
    ///
    /// `inputs` is an `n × dim` matrix with one input per row. Returns the
    /// denominators in row order.
    pub fn averaged_rank_one_update(
        &mut self,
        inputs: &Mat,
        k: f64,
        lambda: f64,
    ) -> Result<Vec<f64>> {
        let n = inputs.rows();
        if inputs.cols() != self.dim() {
            return Err(Error::Dimension(format!(
                "inputs of width {} for a {}x{} factor",
                inputs.cols(),
                self.dim(),
                self.dim()
            )));
        }
        if !inputs.is_finite() {
            return Err(Error::NonFinite("rank-one update input".into()));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        // Rows of U are P x_i; P is symmetric so U = X P.
        let mut u = inputs.matmul(&self.0)?;
        let mut denoms = Vec::with_capacity(n);
        for i in 0..n {
            let q = dot(inputs.row(i), u.row(i));
            let denom = checked_denominator(lambda, k * q)?;
            denoms.push(denom);
            let s = (k / (n as f64 * denom)).sqrt();
            u.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        let correction = u.t_matmul(&u)?;
        self.0.add_scaled(-1.0, &correction)?;
        self.0.scale(1.0 / lambda);
        self.0.symmetrize();
        Ok(denoms)
    }

    /// Denominator `λ + k xᵀ P x` for the current `P`.
    pub fn denominator(&self, x: &[f64], k: f64, lambda: f64) -> Result<f64> {
        check_input(self.dim(), x)?;
        checked_denominator(lambda, k * self.quad_form(x)?)
    }
}

fn check_input(dim: usize, x: &[f64]) -> Result<()> {
    if x.len() != dim {
        return Err(Error::Dimension(format!(
            "input of length {} for a {dim}x{dim} factor",
            x.len()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("rank-one update input".into()));
    }
    Ok(())
}

/// `λ + k q` where `k q ≥ 0` must hold up to rounding.
fn checked_denominator(lambda: f64, kq: f64) -> Result<f64> {
    if !kq.is_finite() {
        return Err(Error::NonFinite("quadratic form".into()));
    }
    if kq < -1e-10 * (1.0 + lambda) {
        return Err(Error::NotPositiveDefinite(format!(
            "negative quadratic form {kq:e}"
        )));
    }
    // Rounding may push xᵀPx a hair below zero for x ≈ 0.
    Ok(lambda + kq.max(0.0))
}

fn symmetry_error(m: &Mat) -> f64 {
    let n = m.rows();
    let mut err: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            err = err.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    err
}
