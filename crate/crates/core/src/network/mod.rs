//! Minimal feed-forward engine with manual backpropagation.
//!
//! An [`ActorCritic`] owns an optional shared trunk, per-branch hidden
//! bodies and two fc output heads (a scalar value head and a policy head).
//! Hidden and value layers carry no bias; only the Gaussian policy head has one.

mod layer;

pub use layer::{Activation, Activations, ConvGeometry, Layer, LayerCache, LayerGrad, LayerKind};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Mat, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObsShape {
    Vector(usize),
    Image { c: usize, h: usize, w: usize },
}

impl ObsShape {
    pub fn len(&self) -> usize {
        match *self {
            ObsShape::Vector(d) => d,
            ObsShape::Image { c, h, w } => c * h * w,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Softmax { actions: usize },
    Gaussian { dim: usize },
}

impl HeadKind {
    pub fn outputs(&self) -> usize {
        match *self {
            HeadKind::Softmax { actions } => actions,
            HeadKind::Gaussian { dim } => dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
    },
    Fc {
        units: usize,
    },
}

/// Layer layout of an actor-critic pair.
#[derive(Clone, Debug, PartialEq)]
pub struct NetSpec {
    pub obs: ObsShape,
    pub head: HeadKind,
    /// Hidden layers; shared when `joint`, duplicated per branch otherwise.
    pub hidden: Vec<LayerSpec>,
    pub activation: Activation,
    pub joint: bool,
}

impl NetSpec {
    /// 32@8×8/4, 64@4×4/2, 32@3×3/1, fc-512, ReLU, joint trunk.
    pub fn atari(obs: ObsShape, actions: usize) -> Self {
        NetSpec {
            obs,
            head: HeadKind::Softmax { actions },
            hidden: vec![
                LayerSpec::Conv {
                    channels: 32,
                    kernel: 8,
                    stride: 4,
                },
                LayerSpec::Conv {
                    channels: 64,
                    kernel: 4,
                    stride: 2,
                },
                LayerSpec::Conv {
                    channels: 32,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Fc { units: 512 },
            ],
            activation: Activation::Relu,
            joint: true,
        }
    }

    /// Desk-scale CNN: 8@4×4/2, 8@3×3/1, fc-64, ReLU, joint trunk. On a 16×16
    /// input this gives 8×7×7 then 8×5×5 feature maps.
    pub fn reduced_cnn(obs: ObsShape, actions: usize) -> Self {
        NetSpec {
            obs,
            head: HeadKind::Softmax { actions },
            hidden: vec![
                LayerSpec::Conv {
                    channels: 8,
                    kernel: 4,
                    stride: 2,
                },
                LayerSpec::Conv {
                    channels: 8,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Fc { units: 64 },
            ],
            activation: Activation::Relu,
            joint: true,
        }
    }

    /// Fully-connected network with the given hidden widths.
    pub fn mlp(
        obs_dim: usize,
        head: HeadKind,
        widths: &[usize],
        activation: Activation,
        joint: bool,
    ) -> Self {
        NetSpec {
            obs: ObsShape::Vector(obs_dim),
            head,
            hidden: widths
                .iter()
                .map(|&units| LayerSpec::Fc { units })
                .collect(),
            activation,
            joint,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerRole {
    Shared,
    CriticHidden,
    ActorHidden,
    ValueHead,
    PolicyHead,
}

/// Outputs and caches of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// One cache per layer, aligned with [`ActorCritic::layers`].
    pub caches: Vec<LayerCache>,
    /// `V(S;Ψ)` per sample.
    pub values: Vec<f64>,
    /// Policy head pre-activation: logits or Gaussian means, `M × outputs`.
    pub head: Mat,
    version: u64,
}

/// Gradients aligned with [`ActorCritic::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub log_std: Option<Vec<f64>>,
}

impl Gradients {
    /// All buffers in parameter order: per layer weight then bias, then log-std.
    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for g in &mut self.layers {
            out.push(g.weight.data_mut());
            if let Some(b) = g.bias.as_mut() {
                out.push(b.as_mut_slice());
            }
        }
        if let Some(s) = self.log_std.as_mut() {
            out.push(s.as_mut_slice());
        }
        out
    }

    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for g in &self.layers {
            out.push(g.weight.data());
            if let Some(b) = g.bias.as_ref() {
                out.push(b.as_slice());
            }
        }
        if let Some(s) = self.log_std.as_ref() {
            out.push(s.as_slice());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.buffers()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorCritic {
    spec: NetSpec,
    layers: Vec<Layer>,
    roles: Vec<LayerRole>,
    /// State-independent log standard deviation of a Gaussian head.
    pub log_std: Option<Vec<f64>>,
    version: u64,
}

impl ActorCritic {
    /// Builds the network with zero parameters; see [`ActorCritic::init_params`].
    pub fn new(spec: NetSpec) -> Result<Self> {
        let mut layers = Vec::new();
        let mut roles = Vec::new();
        let branch = |roles_tag: LayerRole,
                      layers: &mut Vec<Layer>,
                      roles: &mut Vec<LayerRole>|
         -> Result<usize> {
            let mut shape = spec.obs;
            for ls in &spec.hidden {
                let layer = match (*ls, shape) {
                    (
                        LayerSpec::Conv {
                            channels,
                            kernel,
                            stride,
                        },
                        ObsShape::Image { c, h, w },
                    ) => {
                        let g = ConvGeometry::new((c, h, w), channels, (kernel, kernel), stride)?;
                        shape = ObsShape::Image {
                            c: channels,
                            h: g.out_h,
                            w: g.out_w,
                        };
                        Layer::conv(g, spec.activation)
                    }
                    (LayerSpec::Conv { .. }, ObsShape::Vector(_)) => {
                        return Err(Error::Config("conv layer after a flat input".into()));
                    }
                    (LayerSpec::Fc { units }, s) => {
                        shape = ObsShape::Vector(units);
                        Layer::fc(s.len(), units, spec.activation, false)
                    }
                };
                layers.push(layer);
                roles.push(roles_tag);
            }
            if matches!(shape, ObsShape::Image { .. }) {
                return Err(Error::Config(
                    "network must end with an fc layer before the heads".into(),
                ));
            }
            Ok(shape.len())
        };

        let (critic_width, actor_width) = if spec.joint {
            let w = branch(LayerRole::Shared, &mut layers, &mut roles)?;
            (w, w)
        } else {
            let c = branch(LayerRole::CriticHidden, &mut layers, &mut roles)?;
            let a = branch(LayerRole::ActorHidden, &mut layers, &mut roles)?;
            (c, a)
        };
        if spec.hidden.is_empty() && matches!(spec.obs, ObsShape::Image { .. }) {
            return Err(Error::Config(
                "image observations need at least one hidden layer".into(),
            ));
        }
        layers.push(Layer::fc(critic_width, 1, Activation::Identity, false));
        roles.push(LayerRole::ValueHead);
        let gaussian = matches!(spec.head, HeadKind::Gaussian { .. });
        layers.push(Layer::fc(
            actor_width,
            spec.head.outputs(),
            Activation::Identity,
            gaussian,
        ));
        roles.push(LayerRole::PolicyHead);
        let log_std = gaussian.then(|| vec![0.0; spec.head.outputs()]);
        Ok(ActorCritic {
            spec,
            layers,
            roles,
            log_std,
            version: 0,
        })
    }

    /// Deterministic uniform `±1/√fan_in` initialisation; log-std starts at 0.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            layer.init_uniform(&mut rng);
        }
        if let Some(s) = self.log_std.as_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        self.version += 1;
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn roles(&self) -> &[LayerRole] {
        &self.roles
    }

    /// Mutable access to one layer; invalidates outstanding forward passes.
    pub fn layer_mut(&mut self, index: usize) -> &mut Layer {
        self.version += 1;
        &mut self.layers[index]
    }

    pub fn value_head_index(&self) -> usize {
        self.layers.len() - 2
    }

    pub fn policy_head_index(&self) -> usize {
        self.layers.len() - 1
    }

    fn indices(&self, role: LayerRole) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }

    /// Parameter buffers in the same order as [`Gradients::buffers_mut`].
    pub fn param_buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            if let Some(b) = l.bias.as_mut() {
                out.push(b.as_mut_slice());
            }
        }
        if let Some(s) = self.log_std.as_mut() {
            out.push(s.as_mut_slice());
        }
        out
    }

    pub fn param_buffers(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.weight.data());
            if let Some(b) = l.bias.as_ref() {
                out.push(b.as_slice());
            }
        }
        if let Some(s) = self.log_std.as_ref() {
            out.push(s.as_slice());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_buffers().iter().map(|b| b.len()).sum()
    }

    fn input(&self, obs: &Mat) -> Result<Activations> {
        if obs.cols() != self.spec.obs.len() {
            return Err(Error::Dimension(format!(
                "observation width {} but network expects {}",
                obs.cols(),
                self.spec.obs.len()
            )));
        }
        Ok(match self.spec.obs {
            ObsShape::Vector(_) => Activations::Flat(obs.clone()),
            ObsShape::Image { c, h, w } => {
                Activations::Image(Tensor4::from_vec(obs.rows(), c, h, w, obs.data().to_vec())?)
            }
        })
    }

    fn run(
        &self,
        indices: &[usize],
        mut x: Activations,
        caches: &mut [Option<LayerCache>],
    ) -> Result<Activations> {
        for &i in indices {
            let cache = self.layers[i].forward(x)?;
            x = cache.output.clone();
            caches[i] = Some(cache);
        }
        Ok(x)
    }

    /// Forward pass over an `M × obs` batch, retaining every layer's cache.
    pub fn forward(&self, obs: &Mat) -> Result<ForwardPass> {
        let mut caches: Vec<Option<LayerCache>> = vec![None; self.layers.len()];
        let x = self.input(obs)?;
        let h = self.run(&self.indices(LayerRole::Shared), x, &mut caches)?;
        let hc = self.run(
            &self.indices(LayerRole::CriticHidden),
            h.clone(),
            &mut caches,
        )?;
        let ha = self.run(&self.indices(LayerRole::ActorHidden), h, &mut caches)?;
        let v = self.run(&[self.value_head_index()], hc, &mut caches)?;
        let head = self.run(&[self.policy_head_index()], ha, &mut caches)?;
        Ok(ForwardPass {
            caches: caches
                .into_iter()
                .map(|c| c.expect("every layer lies on a path"))
                .collect(),
            values: v.into_flat().into_data(),
            head: head.into_flat(),
            version: self.version,
        })
    }

    fn back(
        &self,
        indices: &[usize],
        pass: &ForwardPass,
        mut d: Vec<f64>,
        grads: &mut [Option<LayerGrad>],
    ) -> Result<Vec<f64>> {
        for &i in indices.iter().rev() {
            let (g, dx) = self.layers[i].backward(&pass.caches[i], &d)?;
            grads[i] = Some(g);
            d = match dx {
                Activations::Flat(m) => m.into_data(),
                Activations::Image(t) => t.into_data(),
            };
        }
        Ok(d)
    }

    /// Backpropagates `∂L/∂V` and `∂L/∂(head)` through both branches.
    ///
    /// Shared-trunk gradients receive the sum of both branch contributions.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        d_values: &[f64],
        d_head: &Mat,
    ) -> Result<Gradients> {
        if pass.version != self.version {
            return Err(Error::Shape(
                "stale forward cache: parameters changed after the forward pass".into(),
            ));
        }
        let mut grads: Vec<Option<LayerGrad>> = vec![None; self.layers.len()];
        let dc = self.back(
            &[self.value_head_index()],
            pass,
            d_values.to_vec(),
            &mut grads,
        )?;
        let dc = self.back(&self.indices(LayerRole::CriticHidden), pass, dc, &mut grads)?;
        let da = self.back(
            &[self.policy_head_index()],
            pass,
            d_head.data().to_vec(),
            &mut grads,
        )?;
        let da = self.back(&self.indices(LayerRole::ActorHidden), pass, da, &mut grads)?;
        let shared = self.indices(LayerRole::Shared);
        if !shared.is_empty() {
            let d: Vec<f64> = dc.iter().zip(&da).map(|(a, b)| a + b).collect();
            self.back(&shared, pass, d, &mut grads)?;
        }
        Ok(Gradients {
            layers: grads
                .into_iter()
                .map(|g| g.expect("every layer lies on a path"))
                .collect(),
            log_std: self.log_std.as_ref().map(|s| vec![0.0; s.len()]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_cnn_shapes() {
        let spec = NetSpec::reduced_cnn(ObsShape::Image { c: 1, h: 16, w: 16 }, 4);
        let mut net = ActorCritic::new(spec).unwrap();
        net.init_params(0);
        assert_eq!(net.layers().len(), 5);
        assert_eq!(net.layers()[2].weight.shape(), (8 * 5 * 5, 64));
        let obs = Mat::from_fn(3, 256, |i, j| ((i + j) % 7) as f64 / 7.0);
        let pass = net.forward(&obs).unwrap();
        assert_eq!(pass.values.len(), 3);
        assert_eq!(pass.head.shape(), (3, 4));
    }

    #[test]
    fn atari_layout_builds() {
        let net =
            ActorCritic::new(NetSpec::atari(ObsShape::Image { c: 4, h: 84, w: 84 }, 6)).unwrap();
        assert_eq!(net.layers()[3].weight.shape(), (32 * 7 * 7, 512));
    }

    #[test]
    fn disjoint_mlp_has_separate_bodies_and_gaussian_bias() {
        let spec = NetSpec::mlp(
            4,
            HeadKind::Gaussian { dim: 2 },
            &[64, 64],
            Activation::Tanh,
            false,
        );
        let net = ActorCritic::new(spec).unwrap();
        assert_eq!(
            net.roles(),
            &[
                LayerRole::CriticHidden,
                LayerRole::CriticHidden,
                LayerRole::ActorHidden,
                LayerRole::ActorHidden,
                LayerRole::ValueHead,
                LayerRole::PolicyHead
            ]
        );
        assert!(net.layers()[5].bias.is_some());
        assert!(net.layers()[4].bias.is_none());
        assert_eq!(net.log_std.as_deref(), Some(&[0.0, 0.0][..]));
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = NetSpec::mlp(
            4,
            HeadKind::Softmax { actions: 2 },
            &[8],
            Activation::Tanh,
            true,
        );
        let mut a = ActorCritic::new(spec.clone()).unwrap();
        let mut b = ActorCritic::new(spec).unwrap();
        a.init_params(42);
        b.init_params(42);
        assert_eq!(a.param_buffers(), b.param_buffers());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let spec = NetSpec::mlp(
            2,
            HeadKind::Softmax { actions: 2 },
            &[3],
            Activation::Tanh,
            true,
        );
        let mut net = ActorCritic::new(spec).unwrap();
        net.init_params(1);
        let obs = Mat::zeros(1, 2);
        let pass = net.forward(&obs).unwrap();
        net.layer_mut(0).weight[(0, 0)] += 1.0;
        assert!(net.backward(&pass, &[0.0], &Mat::zeros(1, 2)).is_err());
    }
}
