use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    col2im_add, conv_output_size, im2col, kernel_to_mat, mat_to_kernel, Mat, Tensor4,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Spatial bookkeeping of a valid convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        (in_c, in_h, in_w): (usize, usize, usize),
        out_c: usize,
        (kh, kw): (usize, usize),
        stride: usize,
    ) -> Result<Self> {
        let out_h = conv_output_size(in_h, kh, stride)?;
        let out_w = conv_output_size(in_w, kw, stride)?;
        Ok(ConvGeometry {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            stride,
            out_h,
            out_w,
        })
    }

    /// Rows of the unfolded input, `C_{l−1}·Hᵏ·Wᵏ`.
    pub fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    /// Output pixels per channel, `H_l·W_l`.
    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_pixels()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Fc,
    Conv(ConvGeometry),
}

/// One learnable layer.
///
/// Fully-connected layers hold `Θ ∈ R^{N_{l−1}×N_l}`. Convolutional layers
/// hold the kernel in its reshaped `(C_{l−1}·Hᵏ·Wᵏ) × C_l` form `o(kernel)`;
/// [`Layer::kernel`] recovers the 4-D kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub weight: Mat,
    pub bias: Option<Vec<f64>>,
    pub activation: Activation,
}

/// Data flowing between layers.
#[derive(Clone, Debug, PartialEq)]
pub enum Activations {
    Flat(Mat),
    Image(Tensor4),
}

impl Activations {
    pub fn batch(&self) -> usize {
        match self {
            Activations::Flat(m) => m.rows(),
            Activations::Image(t) => t.n,
        }
    }

    pub fn data(&self) -> &[f64] {
        match self {
            Activations::Flat(m) => m.data(),
            Activations::Image(t) => t.data(),
        }
    }

    /// Per-sample rows; images are flattened over `(c, h, w)`.
    pub fn into_flat(self) -> Mat {
        match self {
            Activations::Flat(m) => m,
            Activations::Image(t) => t.flatten(),
        }
    }

    pub fn as_flat(&self) -> Mat {
        self.clone().into_flat()
    }
}

/// Per-layer values retained from the forward pass.
#[derive(Clone, Debug)]
pub struct LayerCache {
    /// `X^l` exactly as received (images stay 4-D).
    pub input: Activations,
    /// `Z^l`, laid out like the output.
    pub pre: Activations,
    /// `Y^l = f(Z^l)`.
    pub output: Activations,
    /// `X̂^l` per sample for conv layers.
    pub cols: Option<Vec<Mat>>,
}

impl LayerCache {
    /// `X^l` as an `M × N_{l−1}` matrix (fc layers).
    pub fn input_rows(&self) -> Mat {
        self.input.as_flat()
    }

    /// Mean of the unfolded inputs over the batch, `X̄ ∈ R^{C·Hᵏ·Wᵏ × H_l·W_l}`.
    pub fn mean_cols(&self) -> Option<Mat> {
        let cols = self.cols.as_ref()?;
        let first = cols.first()?;
        let mut acc = Mat::zeros(first.rows(), first.cols());
        for c in cols {
            acc.add_scaled(1.0, c).expect("uniform unfolded shapes");
        }
        acc.scale(1.0 / cols.len() as f64);
        Some(acc)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Mat,
    pub bias: Option<Vec<f64>>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &Layer) -> Self {
        LayerGrad {
            weight: Mat::zeros(layer.weight.rows(), layer.weight.cols()),
            bias: layer.bias.as_ref().map(|b| vec![0.0; b.len()]),
        }
    }
}

impl Layer {
    pub fn fc(inputs: usize, outputs: usize, activation: Activation, with_bias: bool) -> Self {
        Layer {
            kind: LayerKind::Fc,
            weight: Mat::zeros(inputs, outputs),
            bias: with_bias.then(|| vec![0.0; outputs]),
            activation,
        }
    }

    pub fn conv(geometry: ConvGeometry, activation: Activation) -> Self {
        Layer {
            kind: LayerKind::Conv(geometry),
            weight: Mat::zeros(geometry.patch_len(), geometry.out_c),
            bias: None,
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        match self.kind {
            LayerKind::Fc => self.weight.cols(),
            LayerKind::Conv(g) => g.out_len(),
        }
    }

    /// Uniform `±1/√fan_in` initialisation of weight and bias.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let bound = 1.0 / (self.fan_in() as f64).sqrt();
        for w in self.weight.data_mut() {
            *w = rng.random_range(-bound..=bound);
        }
        if let Some(b) = self.bias.as_mut() {
            for v in b.iter_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
    }

    /// 4-D kernel `C_{l−1} × C_l × Hᵏ × Wᵏ` of a conv layer.
    pub fn kernel(&self) -> Option<Tensor4> {
        match self.kind {
            LayerKind::Conv(g) => {
                Some(mat_to_kernel(&self.weight, g.in_c, g.kh, g.kw).expect("geometry matches"))
            }
            LayerKind::Fc => None,
        }
    }

    pub fn set_kernel(&mut self, kernel: &Tensor4) -> Result<()> {
        match self.kind {
            LayerKind::Conv(g) if kernel.dims() == (g.in_c, g.out_c, g.kh, g.kw) => {
                self.weight = kernel_to_mat(kernel);
                Ok(())
            }
            _ => Err(Error::Dimension(format!(
                "kernel {:?} does not fit layer",
                kernel.dims()
            ))),
        }
    }

    pub fn forward(&self, input: Activations) -> Result<LayerCache> {
        match self.kind {
            LayerKind::Fc => self.fc_forward(input),
            LayerKind::Conv(g) => self.conv_forward(g, input),
        }
    }

    fn fc_forward(&self, input: Activations) -> Result<LayerCache> {
        let x = input.as_flat();
        if x.cols() != self.weight.rows() {
            return Err(Error::Dimension(format!(
                "fc layer expects {} inputs, got {}",
                self.weight.rows(),
                x.cols()
            )));
        }
        let mut z = x.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            for i in 0..z.rows() {
                for (v, bj) in z.row_mut(i).iter_mut().zip(b) {
                    *v += bj;
                }
            }
        }
        let mut y = z.clone();
        let act = self.activation;
        y.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        Ok(LayerCache {
            input,
            pre: Activations::Flat(z),
            output: Activations::Flat(y),
            cols: None,
        })
    }

    fn conv_forward(&self, g: ConvGeometry, input: Activations) -> Result<LayerCache> {
        let x = match input {
            Activations::Image(t) => t,
            Activations::Flat(m) => {
                let n = m.rows();
                Tensor4::from_vec(n, g.in_c, g.in_h, g.in_w, m.into_data())?
            }
        };
        if (x.c, x.h, x.w) != (g.in_c, g.in_h, g.in_w) {
            return Err(Error::Dimension(format!(
                "conv layer expects {}x{}x{} inputs, got {}x{}x{}",
                g.in_c, g.in_h, g.in_w, x.c, x.h, x.w
            )));
        }
        let n = x.n;
        let pixels = g.out_pixels();
        let mut z = Tensor4::zeros(n, g.out_c, g.out_h, g.out_w);
        let mut cols = Vec::with_capacity(n);
        let sample_len = g.out_c * pixels;
        for s in 0..n {
            let xc = im2col(&x, s, g.kh, g.kw, g.stride)?;
            // Θ̂ᵀ X̂ is already channel-major over output pixels.
            let zs = self.weight.t_matmul(&xc)?;
            z.data_mut()[s * sample_len..(s + 1) * sample_len].copy_from_slice(zs.data());
            cols.push(xc);
        }
        let mut y = z.clone();
        let act = self.activation;
        y.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        Ok(LayerCache {
            input: Activations::Image(x),
            pre: Activations::Image(z),
            output: Activations::Image(y),
            cols: Some(cols),
        })
    }

    /// Given `∂L/∂Y`, returns the parameter gradient and `∂L/∂X` shaped like the input.
    pub fn backward(&self, cache: &LayerCache, d_out: &[f64]) -> Result<(LayerGrad, Activations)> {
        let z = cache.pre.data();
        let y = cache.output.data();
        if d_out.len() != z.len() {
            return Err(Error::Dimension(format!(
                "upstream gradient of length {} for output of length {}",
                d_out.len(),
                z.len()
            )));
        }
        let act = self.activation;
        let dz: Vec<f64> = d_out
            .iter()
            .zip(z.iter().zip(y))
            .map(|(&d, (&zv, &yv))| d * act.derivative(zv, yv))
            .collect();
        match self.kind {
            LayerKind::Fc => {
                let x = cache.input_rows();
                let dz = Mat::from_vec(x.rows(), self.weight.cols(), dz)?;
                let weight = x.t_matmul(&dz)?;
                let bias = self.bias.as_ref().map(|_| {
                    let mut b = vec![0.0; dz.cols()];
                    for i in 0..dz.rows() {
                        for (bj, v) in b.iter_mut().zip(dz.row(i)) {
                            *bj += v;
                        }
                    }
                    b
                });
                let dx = dz.matmul_t(&self.weight)?;
                let dx = match &cache.input {
                    Activations::Flat(_) => Activations::Flat(dx),
                    Activations::Image(t) => {
                        Activations::Image(Tensor4::from_vec(t.n, t.c, t.h, t.w, dx.into_data())?)
                    }
                };
                Ok((LayerGrad { weight, bias }, dx))
            }
            LayerKind::Conv(g) => {
                let cols = cache
                    .cols
                    .as_ref()
                    .ok_or_else(|| Error::Shape("conv cache without unfolded inputs".into()))?;
                let pixels = g.out_pixels();
                let sample_len = g.out_c * pixels;
                let mut weight = Mat::zeros(g.patch_len(), g.out_c);
                let mut dx = Tensor4::zeros(cols.len(), g.in_c, g.in_h, g.in_w);
                for (s, xc) in cols.iter().enumerate() {
                    let dzs = Mat::from_vec(
                        g.out_c,
                        pixels,
                        dz[s * sample_len..(s + 1) * sample_len].to_vec(),
                    )?;
                    weight.add_scaled(1.0, &xc.matmul_t(&dzs)?)?;
                    let dcols = self.weight.matmul(&dzs)?;
                    col2im_add(&dcols, &mut dx, s, g.kh, g.kw, g.stride)?;
                }
                Ok((LayerGrad { weight, bias: None }, Activations::Image(dx)))
            }
        }
    }
}

/// Direct nested-loop convolution; kept as a reference for tests.
#[cfg(test)]
pub(crate) fn direct_conv(x: &Tensor4, kernel: &Tensor4, stride: usize) -> Tensor4 {
    let (ci, co, kh, kw) = kernel.dims();
    let ho = (x.h - kh) / stride + 1;
    let wo = (x.w - kw) / stride + 1;
    let mut out = Tensor4::zeros(x.n, co, ho, wo);
    for n in 0..x.n {
        for o in 0..co {
            for i in 0..ho {
                for j in 0..wo {
                    let mut s = 0.0;
                    for c in 0..ci {
                        for a in 0..kh {
                            for b in 0..kw {
                                s += x.at(n, c, i * stride + a, j * stride + b)
                                    * kernel.at(c, o, a, b);
                            }
                        }
                    }
                    *out.at_mut(n, o, i, j) = s;
                }
            }
        }
    }
    out
}
