use crate::error::{Error, Result};
use crate::numerics::Mat;

/// Dense `n × c × h × w` array stored row-major over `(n, c, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {n}x{c}x{h}x{w} tensor",
                data.len()
            )));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[((n * self.c + c) * self.h + h) * self.w + w]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut f64 {
        let (cc, hh, ww) = (self.c, self.h, self.w);
        &mut self.data[((n * cc + c) * hh + h) * ww + w]
    }

    /// Contiguous `c·h·w` slice of one sample.
    #[inline]
    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.c * self.h * self.w;
        &self.data[n * len..(n + 1) * len]
    }

    /// Flattens each sample into a row: `n × (c·h·w)`.
    pub fn flatten(self) -> Mat {
        let cols = self.c * self.h * self.w;
        Mat::from_vec(self.n, cols, self.data).expect("flatten preserves length")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Output spatial size of a valid (unpadded) convolution.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 || kernel > input || (input - kernel) % stride != 0 {
        return Err(Error::Shape(format!(
            "kernel {kernel} with stride {stride} does not tile input of size {input}"
        )));
    }
    Ok((input - kernel) / stride + 1)
}

/// Unfolds sample `n` of `x` into a `(c·kh·kw) × (ho·wo)` matrix.
///
/// Column `j` holds the receptive field of output pixel `j` (row-major over
/// the output grid); rows are ordered `(c, ki, kj)` row-major.
pub fn im2col(x: &Tensor4, n: usize, kh: usize, kw: usize, stride: usize) -> Result<Mat> {
    let ho = conv_output_size(x.h, kh, stride)?;
    let wo = conv_output_size(x.w, kw, stride)?;
    let cols = ho * wo;
    let mut out = Mat::zeros(x.c * kh * kw, cols);
    let src = x.sample(n);
    let data = out.data_mut();
    for c in 0..x.c {
        for ki in 0..kh {
            for kj in 0..kw {
                let r = (c * kh + ki) * kw + kj;
                let dst = &mut data[r * cols..(r + 1) * cols];
                for oi in 0..ho {
                    let ii = oi * stride + ki;
                    let base = (c * x.h + ii) * x.w + kj;
                    for oj in 0..wo {
                        dst[oi * wo + oj] = src[base + oj * stride];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`im2col`]: scatter-adds the columns back into sample `n` of `out`.
pub fn col2im_add(
    cols: &Mat,
    out: &mut Tensor4,
    n: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Result<()> {
    let ho = conv_output_size(out.h, kh, stride)?;
    let wo = conv_output_size(out.w, kw, stride)?;
    if cols.shape() != (out.c * kh * kw, ho * wo) {
        return Err(Error::Dimension(format!(
            "col2im: columns {:?} do not match tensor {:?}",
            cols.shape(),
            out.dims()
        )));
    }
    let (c_in, h, w) = (out.c, out.h, out.w);
    let len = c_in * h * w;
    let dst = &mut out.data_mut()[n * len..(n + 1) * len];
    let ncols = ho * wo;
    for c in 0..c_in {
        for ki in 0..kh {
            for kj in 0..kw {
                let r = (c * kh + ki) * kw + kj;
                let src = &cols.data()[r * ncols..(r + 1) * ncols];
                for oi in 0..ho {
                    let base = (c * h + oi * stride + ki) * w + kj;
                    for oj in 0..wo {
                        dst[base + oj * stride] += src[oi * wo + oj];
                    }
                }
            }
        }
    }
    Ok(())
}

/// `o(·)`: kernel `c_in × c_out × kh × kw` to the `(c_in·kh·kw) × c_out` matrix.
pub fn kernel_to_mat(kernel: &Tensor4) -> Mat {
    let (ci, co, kh, kw) = kernel.dims();
    let mut out = Mat::zeros(ci * kh * kw, co);
    for c in 0..ci {
        for o in 0..co {
            for i in 0..kh {
                for j in 0..kw {
                    out[((c * kh + i) * kw + j, o)] = kernel.at(c, o, i, j);
                }
            }
        }
    }
    out
}

/// `τ(·)`: exact inverse of [`kernel_to_mat`].
pub fn mat_to_kernel(m: &Mat, c_in: usize, kh: usize, kw: usize) -> Result<Tensor4> {
    if m.rows() != c_in * kh * kw {
        return Err(Error::Dimension(format!(
            "cannot fold {:?} into a kernel with {c_in} input channels and {kh}x{kw} window",
            m.shape()
        )));
    }
    let co = m.cols();
    let mut out = Tensor4::zeros(c_in, co, kh, kw);
    for c in 0..c_in {
        for o in 0..co {
            for i in 0..kh {
                for j in 0..kw {
                    *out.at_mut(c, o, i, j) = m[((c * kh + i) * kw + j, o)];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_first_column_is_top_left_window() {
        let x = Tensor4::from_vec(1, 1, 3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let cols = im2col(&x, 0, 2, 2, 1).unwrap();
        assert_eq!(cols.shape(), (4, 4));
        let col0: Vec<f64> = (0..4).map(|r| cols[(r, 0)]).collect();
        assert_eq!(col0, vec![1.0, 2.0, 4.0, 5.0]);
        let col3: Vec<f64> = (0..4).map(|r| cols[(r, 3)]).collect();
        assert_eq!(col3, vec![5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn full_window_yields_flattened_image() {
        let x = Tensor4::from_vec(1, 1, 3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let cols = im2col(&x, 0, 3, 3, 1).unwrap();
        assert_eq!(cols.shape(), (9, 1));
        assert_eq!(cols.data(), x.data());
    }

    #[test]
    fn stride_two_partitions_input() {
        let x = Tensor4::from_vec(1, 1, 4, 4, (0..16).map(f64::from).collect()).unwrap();
        let cols = im2col(&x, 0, 2, 2, 2).unwrap();
        assert_eq!(cols.cols(), 4);
        let mut all: Vec<f64> = cols.data().to_vec();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, x.data().to_vec());
    }

    #[test]
    fn non_integral_output_is_rejected() {
        let x = Tensor4::zeros(1, 1, 4, 4);
        assert!(im2col(&x, 0, 3, 3, 2).is_err());
        assert!(conv_output_size(3, 4, 1).is_err());
    }

    #[test]
    fn kernel_reshape_round_trip() {
        let k = Tensor4::from_vec(2, 3, 2, 2, (0..24).map(|v| v as f64 * 0.3).collect()).unwrap();
        let m = kernel_to_mat(&k);
        assert_eq!(m.shape(), (8, 3));
        assert_eq!(mat_to_kernel(&m, 2, 2, 2).unwrap(), k);
    }
}
