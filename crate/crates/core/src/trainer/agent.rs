use crate::error::{Error, Result};
use crate::kfacnpg::KfacActorState;
use crate::network::{ActorCritic, LayerKind, LayerRole};
use crate::numerics::Mat;
use crate::optim::{RlsLayerState, RmspropState};

use super::config::{Algorithm, TrainConfig};

/// Update rule owned by one layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerOptimizer {
    Rmsprop {
        weight: RmspropState,
        bias: Option<RmspropState>,
    },
    RlsCriticOutput(RlsLayerState),
    RlsFc(RlsLayerState),
    RlsConv(RlsLayerState),
    /// The K-FAC factors cover `[W; b]` when the layer has a bias (input augmented with 1).
    Kfac(KfacActorState),
}

impl LayerOptimizer {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerOptimizer::Rmsprop { .. } => "rmsprop",
            LayerOptimizer::RlsCriticOutput(_) => "rls_critic_output",
            LayerOptimizer::RlsFc(_) => "rls_fc",
            LayerOptimizer::RlsConv(_) => "rls_conv",
            LayerOptimizer::Kfac(_) => "kfac",
        }
    }

    /// Every inverse-autocorrelation matrix held by this optimizer.
    pub fn p_matrices(&self) -> Vec<&crate::numerics::SpdMat> {
        match self {
            LayerOptimizer::Rmsprop { .. } => Vec::new(),
            LayerOptimizer::RlsCriticOutput(s)
            | LayerOptimizer::RlsFc(s)
            | LayerOptimizer::RlsConv(s) => vec![&s.p],
            LayerOptimizer::Kfac(s) => vec![&s.p1, &s.p2],
        }
    }
}

/// Network plus per-layer optimizer state.
#[derive(Clone, Debug)]
pub struct Agent {
    pub net: ActorCritic,
    /// Aligned with `net.layers()`.
    pub optimizers: Vec<LayerOptimizer>,
    /// RMSProp state of the Gaussian log-std, if any.
    pub log_std_opt: Option<RmspropState>,
}

impl Agent {
    /// Builds and initialises the network and allocates optimizer states with `P₀ = I`.
    pub fn build(config: &TrainConfig) -> Result<Self> {
        let spec = config.net_spec();
        if spec.head != config.env.head() {
            return Err(Error::Config(format!(
                "policy head {:?} does not fit {}",
                spec.head, config.env
            )));
        }
        let mut net = ActorCritic::new(spec)?;
        net.init_params(config.seed);
        let rms =
            |len: usize| RmspropState::new(len, config.rms_lr, config.rms_rho, config.rms_delta);
        let mut optimizers = Vec::with_capacity(net.layers().len());
        for (layer, role) in net.layers().iter().zip(net.roles()) {
            let (rows, cols) = layer.weight.shape();
            let rls = || RlsLayerState::new(rows, rows, cols, config.beta, config.lambda);
            let rmsprop = || LayerOptimizer::Rmsprop {
                weight: rms(rows * cols),
                bias: layer.bias.as_ref().map(|b| rms(b.len())),
            };
            let opt = match (config.algorithm, role) {
                (Algorithm::Rmsa2c, _) => rmsprop(),
                (Algorithm::Rlssa2c, LayerRole::PolicyHead) => rmsprop(),
                (Algorithm::Rlsna2c, LayerRole::PolicyHead) => {
                    let inputs = rows + usize::from(layer.bias.is_some());
                    let mut s = KfacActorState::new(inputs, cols, config.alpha, config.lambda);
                    s.sign = config.w_sign;
                    LayerOptimizer::Kfac(s)
                }
                (_, LayerRole::ValueHead) => LayerOptimizer::RlsCriticOutput(rls()),
                (_, _) => match layer.kind {
                    LayerKind::Conv(_) => LayerOptimizer::RlsConv(rls()),
                    LayerKind::Fc => LayerOptimizer::RlsFc(rls()),
                },
            };
            optimizers.push(opt);
        }
        // No momentum on the K-FAC path.
        if config.algorithm == Algorithm::Rlsna2c {
            for opt in &mut optimizers {
                if let LayerOptimizer::RlsCriticOutput(s)
                | LayerOptimizer::RlsFc(s)
                | LayerOptimizer::RlsConv(s) = opt
                {
                    s.beta = 0.0;
                }
            }
        }
        let log_std_opt = net.log_std.as_ref().map(|s| rms(s.len()));
        Ok(Agent {
            net,
            optimizers,
            log_std_opt,
        })
    }

    /// Layer indices in update order: critic side (shared trunk, critic body,
    /// value head) first, then actor body and policy head.
    pub fn update_order(&self) -> Vec<usize> {
        let roles = self.net.roles();
        let pick = |r: LayerRole| (0..roles.len()).filter(move |&i| roles[i] == r);
        pick(LayerRole::Shared)
            .chain(pick(LayerRole::CriticHidden))
            .chain(pick(LayerRole::ValueHead))
            .chain(pick(LayerRole::ActorHidden))
            .chain(pick(LayerRole::PolicyHead))
            .collect()
    }
}

/// `[X, 1]`
pub(crate) fn augment_ones(x: &Mat) -> Mat {
    let (m, n) = x.shape();
    Mat::from_fn(m, n + 1, |i, j| if j < n { x[(i, j)] } else { 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::EnvId;

    fn kinds(algorithm: Algorithm, env: EnvId) -> Vec<&'static str> {
        let agent = Agent::build(&TrainConfig::new(algorithm, env)).unwrap();
        agent.optimizers.iter().map(LayerOptimizer::kind).collect()
    }

    #[test]
    fn rlssa2c_on_pixelgrid() {
        assert_eq!(
            kinds(Algorithm::Rlssa2c, EnvId::PixelGrid),
            vec![
                "rls_conv",
                "rls_conv",
                "rls_fc",
                "rls_critic_output",
                "rmsprop"
            ]
        );
    }

    #[test]
    fn rlsna2c_on_pointmass() {
        let k = kinds(Algorithm::Rlsna2c, EnvId::PointMass);
        assert_eq!(
            k,
            vec![
                "rls_fc",
                "rls_fc",
                "rls_fc",
                "rls_fc",
                "rls_critic_output",
                "kfac"
            ]
        );
        let agent = Agent::build(&TrainConfig::new(Algorithm::Rlsna2c, EnvId::PointMass)).unwrap();
        match &agent.optimizers[5] {
            LayerOptimizer::Kfac(s) => assert_eq!((s.p1.dim(), s.p2.dim()), (65, 2)),
            other => panic!("{other:?}"),
        }
        assert!(agent.log_std_opt.is_some());
    }

    #[test]
    fn rmsa2c_uses_rmsprop_everywhere() {
        for env in [EnvId::PixelGrid, EnvId::CartPoleLite, EnvId::PointMass] {
            assert!(kinds(Algorithm::Rmsa2c, env)
                .iter()
                .all(|k| *k == "rmsprop"));
        }
    }

    #[test]
    fn critic_layers_come_first() {
        let agent = Agent::build(&TrainConfig::new(Algorithm::Rlssa2c, EnvId::PointMass)).unwrap();
        assert_eq!(agent.update_order(), vec![0, 1, 4, 2, 3, 5]);
    }
}
