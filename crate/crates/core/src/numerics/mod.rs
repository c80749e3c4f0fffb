//! Dense linear algebra substrate: matrices, 4-D tensors, reshape maps,
//! rank-1 inverse updates and Kronecker application.
//!
//! All vectorisation is row-major, so `vec(x gᵀ) = x ⊗ g` and
//! `(P1 ⊗ P2) vec(B) = vec(P1 B P2)` for symmetric `P2`.

mod mat;
mod spd;
mod tensor;

pub use mat::{dot, Mat};
pub use spd::SpdMat;
pub use tensor::{col2im_add, conv_output_size, im2col, kernel_to_mat, mat_to_kernel, Tensor4};

use crate::error::{Error, Result};

/// Row-major vectorisation: `out[i·m + j] = M[i][j]`.
pub fn vec_rowmajor(m: &Mat) -> Vec<f64> {
    m.data().to_vec()
}

/// Inverse of [`vec_rowmajor`].
pub fn mat_from_vec(b: &[f64], n: usize, m: usize) -> Result<Mat> {
    Mat::from_vec(n, m, b.to_vec())
}

/// One exponentially-weighted Sherman–Morrison step.
///
/// Returns `(1/λ)(P − k P x xᵀ P / (λ + k xᵀ P x))`, the inverse of
/// `λ P⁻¹ + k x xᵀ`, re-symmetrised.
pub fn sherman_morrison_step(p: &SpdMat, x: &[f64], k: f64, lambda: f64) -> Result<SpdMat> {
    let mut out = p.clone();
    out.rank_one_update(x, k, lambda)?;
    Ok(out)
}

/// `vec(P1 · m(b) · P2)`, i.e. `(P1 ⊗ P2) b` under row-major vectorisation.
pub fn kron_apply(p1: &Mat, b: &[f64], p2: &Mat) -> Result<Vec<f64>> {
    let (n, m) = (p1.rows(), p2.rows());
    if p1.cols() != n || p2.cols() != m || b.len() != n * m {
        return Err(Error::Dimension(format!(
            "kron_apply with factors {:?}, {:?} and vector of length {}",
            p1.shape(),
            p2.shape(),
            b.len()
        )));
    }
    let mb = mat_from_vec(b, n, m)?;
    Ok(vec_rowmajor(&p1.matmul(&mb)?.matmul(p2)?))
}

/// Scales every gradient buffer by a common factor so that the global L2
/// norm does not exceed `max_norm`. Returns the norm before clipping.
pub fn l2_clip(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    debug_assert!(max_norm > 0.0);
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}
