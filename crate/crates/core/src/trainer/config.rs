use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::envsim::EnvId;
use crate::error::{Error, Result};
use crate::kfacnpg::{default_alpha_schedule, WSign};
use crate::network::{Activation, NetSpec, ObsShape};
use crate::optim::{LinearDecay, ScheduleState};
use crate::policy::EntropyMode;

/// Environment variable that overrides `log_dir`.
pub const LOG_DIR_ENV: &str = "RLSA2C_LOG_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Rmsa2c,
    Rlssa2c,
    Rlsna2c,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Rmsa2c, Algorithm::Rlssa2c, Algorithm::Rlsna2c];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Rmsa2c => "rmsa2c",
            Algorithm::Rlssa2c => "rlssa2c",
            Algorithm::Rlsna2c => "rlsna2c",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rmsa2c" => Ok(Algorithm::Rmsa2c),
            "rlssa2c" => Ok(Algorithm::Rlssa2c),
            "rlsna2c" => Ok(Algorithm::Rlsna2c),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetworkKind {
    /// Small CNN trunk for 16×16 images.
    ReducedCnn,
    /// The full Atari-sized CNN trunk.
    Atari,
    /// Fully-connected layers of widths `hidden`.
    Mlp,
}

impl NetworkKind {
    fn name(self) -> &'static str {
        match self {
            NetworkKind::ReducedCnn => "reduced_cnn",
            NetworkKind::Atari => "atari",
            NetworkKind::Mlp => "mlp",
        }
    }
}

impl FromStr for NetworkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reduced_cnn" => Ok(NetworkKind::ReducedCnn),
            "atari" => Ok(NetworkKind::Atari),
            "mlp" => Ok(NetworkKind::Mlp),
            other => Err(Error::Config(format!("unknown network `{other}`"))),
        }
    }
}

/// Every knob of a training run. See [`TrainConfig::KEYS`] for the text keys.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub env: EnvId,
    pub workers: usize,
    pub steps: usize,
    pub total_timesteps: u64,
    pub gamma: f64,
    pub eta: f64,
    pub lambda: f64,
    pub beta: f64,
    /// `k_t` and `μ_t`, indexed by iteration.
    pub schedule: ScheduleState,
    /// `k_t` of the K-FAC factors; follows `schedule.k` unless set.
    pub kfac_k: Option<LinearDecay>,
    /// Gradient scaling factor of fc hidden layers.
    pub mu_fc: f64,
    pub rms_lr: f64,
    pub rms_rho: f64,
    pub rms_delta: f64,
    /// NPG step size, indexed by timesteps.
    pub alpha: LinearDecay,
    pub clip_norm: f64,
    pub seed: u64,
    pub network: NetworkKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub joint: bool,
    pub entropy_mode: EntropyMode,
    pub w_sign: WSign,
    pub log_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Save every this many iterations (0: only at the end of a run).
    pub checkpoint_every: u64,
    /// Positive-definiteness spot check period, in iterations.
    pub spd_check_every: u64,
}

impl TrainConfig {
    /// Keys accepted by [`TrainConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "algorithm",
        "env",
        "workers",
        "steps",
        "total_timesteps",
        "gamma",
        "eta",
        "lambda",
        "beta",
        "k0",
        "k_decay",
        "k_min",
        "mu0",
        "mu_decay",
        "mu_min",
        "schedule_interval",
        "kfac_k0",
        "kfac_k_decay",
        "kfac_k_min",
        "mu_fc",
        "rms_lr",
        "rms_rho",
        "rms_delta",
        "alpha0",
        "alpha_decay",
        "alpha_interval",
        "alpha_min",
        "clip_norm",
        "seed",
        "network",
        "hidden",
        "activation",
        "joint",
        "entropy_mode",
        "w_sign",
        "log_dir",
        "checkpoint",
        "checkpoint_every",
        "spd_check_every",
    ];

    /// Defaults for an algorithm/environment pair.
    pub fn new(algorithm: Algorithm, env: EnvId) -> Self {
        let (network, hidden, activation, joint) = match env {
            EnvId::PixelGrid => (NetworkKind::ReducedCnn, vec![], Activation::Relu, true),
            EnvId::CartPoleLite => (NetworkKind::Mlp, vec![64], Activation::Tanh, true),
            EnvId::PointMass => (NetworkKind::Mlp, vec![64, 64], Activation::Tanh, false),
        };
        let alpha = if env.is_continuous() {
            LinearDecay::constant(0.001)
        } else {
            default_alpha_schedule()
        };
        TrainConfig {
            algorithm,
            env,
            workers: 32,
            steps: 5,
            total_timesteps: 1_000_000,
            gamma: 0.99,
            eta: 0.01,
            lambda: 1.0,
            beta: if algorithm == Algorithm::Rlssa2c {
                0.5
            } else {
                0.0
            },
            schedule: ScheduleState::default(),
            kfac_k: None,
            mu_fc: 1.0,
            rms_lr: 0.00025,
            rms_rho: 0.99,
            rms_delta: 0.00005,
            alpha,
            clip_norm: 0.5,
            seed: 0,
            network,
            hidden,
            activation,
            joint,
            entropy_mode: EntropyMode::Full,
            w_sign: WSign::Descent,
            log_dir: PathBuf::from("logs"),
            checkpoint: None,
            checkpoint_every: 0,
            spd_check_every: 1000,
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. `algorithm` and
    /// `env` pick the defaults, every other key then overrides in order.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    /// Like [`TrainConfig::parse`] with `overrides` applied after the file contents.
    pub fn parse_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = parse_pairs(text)?;
        pairs.extend(overrides.iter().cloned());
        Self::from_pairs(&pairs)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_with_overrides(&text, overrides)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let last = |key: &str| {
            pairs
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        };
        let algorithm = last("algorithm")
            .map(str::parse)
            .transpose()?
            .unwrap_or(Algorithm::Rlssa2c);
        let env = last("env")
            .map(str::parse)
            .transpose()?
            .unwrap_or(EnvId::CartPoleLite);
        let mut config = TrainConfig::new(algorithm, env);
        for (k, v) in pairs {
            if k != "algorithm" && k != "env" {
                config.set(k, v)?;
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad =
            |e: &dyn fmt::Display| Error::Config(format!("bad value `{value}` for `{key}`: {e}"));
        let f = || value.parse::<f64>().map_err(|e| bad(&e));
        let u = || value.parse::<u64>().map_err(|e| bad(&e));
        let kfac = |c: &TrainConfig| c.kfac_k.unwrap_or(c.schedule.k);
        match key {
            "algorithm" => {
                let algorithm: Algorithm = value.parse()?;
                // Re-derive the algorithm-dependent default.
                if self.beta
                    == if self.algorithm == Algorithm::Rlssa2c {
                        0.5
                    } else {
                        0.0
                    }
                {
                    self.beta = if algorithm == Algorithm::Rlssa2c {
                        0.5
                    } else {
                        0.0
                    };
                }
                self.algorithm = algorithm;
            }
            "env" => self.env = value.parse()?,
            "workers" => self.workers = u()? as usize,
            "steps" => self.steps = u()? as usize,
            "total_timesteps" => self.total_timesteps = u()?,
            "gamma" => self.gamma = f()?,
            "eta" => self.eta = f()?,
            "lambda" => self.lambda = f()?,
            "beta" => self.beta = f()?,
            "k0" => self.schedule.k.init = f()?,
            "k_decay" => self.schedule.k.decrement = f()?,
            "k_min" => self.schedule.k.floor = f()?,
            "mu0" => self.schedule.mu.init = f()?,
            "mu_decay" => self.schedule.mu.decrement = f()?,
            "mu_min" => self.schedule.mu.floor = f()?,
            "schedule_interval" => {
                let t = u()?;
                self.schedule.k.interval = t;
                self.schedule.mu.interval = t;
            }
            "kfac_k0" => {
                self.kfac_k = Some(LinearDecay {
                    init: f()?,
                    ..kfac(self)
                })
            }
            "kfac_k_decay" => {
                self.kfac_k = Some(LinearDecay {
                    decrement: f()?,
                    ..kfac(self)
                })
            }
            "kfac_k_min" => {
                self.kfac_k = Some(LinearDecay {
                    floor: f()?,
                    ..kfac(self)
                })
            }
            "mu_fc" => self.mu_fc = f()?,
            "rms_lr" => self.rms_lr = f()?,
            "rms_rho" => self.rms_rho = f()?,
            "rms_delta" => self.rms_delta = f()?,
            "alpha0" => self.alpha.init = f()?,
            "alpha_decay" => self.alpha.decrement = f()?,
            "alpha_interval" => self.alpha.interval = u()?,
            "alpha_min" => self.alpha.floor = f()?,
            "clip_norm" => self.clip_norm = f()?,
            "seed" => self.seed = u()?,
            "network" => self.network = value.parse()?,
            "hidden" => {
                self.hidden = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|s| s.trim().parse::<usize>().map_err(|e| bad(&e)))
                        .collect::<Result<_>>()?
                }
            }
            "activation" => {
                self.activation = match value {
                    "tanh" => Activation::Tanh,
                    "relu" => Activation::Relu,
                    "identity" => Activation::Identity,
                    _ => return Err(bad(&"expected tanh, relu or identity")),
                }
            }
            "joint" => self.joint = value.parse::<bool>().map_err(|e| bad(&e))?,
            "entropy_mode" => {
                self.entropy_mode = match value {
                    "full" => EntropyMode::Full,
                    "sampled" => EntropyMode::Sampled,
                    _ => return Err(bad(&"expected full or sampled")),
                }
            }
            "w_sign" => {
                self.w_sign = match value {
                    "descent" => WSign::Descent,
                    "literal" => WSign::Literal,
                    _ => return Err(bad(&"expected descent or literal")),
                }
            }
            "log_dir" => self.log_dir = PathBuf::from(value),
            "checkpoint" => self.checkpoint = (!value.is_empty()).then(|| PathBuf::from(value)),
            "checkpoint_every" => self.checkpoint_every = u()?,
            "spd_check_every" => self.spd_check_every = u()?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("gamma must lie in (0, 1]");
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return fail("lambda must lie in (0, 1]");
        }
        if !(self.eta >= 0.0) {
            return fail("eta must be non-negative");
        }
        if self.workers == 0 || self.steps == 0 {
            return fail("workers and steps must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta) {
            return fail("beta must lie in [0, 1)");
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be positive");
        }
        let k = self.kfac_k.unwrap_or(self.schedule.k);
        if self.schedule.k.floor < 0.0 || k.floor < 0.0 || self.schedule.mu.floor <= 0.0 {
            return fail("schedule floors must be non-negative (mu positive)");
        }
        if self.network == NetworkKind::Mlp
            && matches!(self.env.obs_shape(), ObsShape::Image { .. })
            && !self.joint
        {
            return fail("image observations need a joint trunk");
        }
        if self.network != NetworkKind::Mlp
            && !matches!(self.env.obs_shape(), ObsShape::Image { .. })
        {
            return fail("convolutional networks need an image environment");
        }
        Ok(())
    }

    /// Network layout implied by the config.
    pub fn net_spec(&self) -> NetSpec {
        let obs = self.env.obs_shape();
        let head = self.env.head();
        match self.network {
            NetworkKind::ReducedCnn => NetSpec {
                activation: self.activation,
                ..NetSpec::reduced_cnn(obs, head.outputs())
            },
            NetworkKind::Atari => NetSpec {
                activation: self.activation,
                ..NetSpec::atari(obs, head.outputs())
            },
            NetworkKind::Mlp => NetSpec {
                obs,
                head,
                hidden: self
                    .hidden
                    .iter()
                    .map(|&units| crate::network::LayerSpec::Fc { units })
                    .collect(),
                activation: self.activation,
                joint: self.joint,
            },
        }
    }

    pub fn kfac_k_schedule(&self) -> LinearDecay {
        self.kfac_k.unwrap_or(self.schedule.k)
    }

    pub fn batch_size(&self) -> u64 {
        (self.workers * self.steps) as u64
    }

    /// `log_dir`, unless the environment variable overrides it.
    pub fn resolved_log_dir(&self) -> PathBuf {
        match std::env::var_os(LOG_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.log_dir.clone(),
        }
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        let fl = |v: f64| format!("{v:?}");
        put("algorithm", self.algorithm.to_string());
        put("env", self.env.to_string());
        put("workers", self.workers.to_string());
        put("steps", self.steps.to_string());
        put("total_timesteps", self.total_timesteps.to_string());
        put("gamma", fl(self.gamma));
        put("eta", fl(self.eta));
        put("lambda", fl(self.lambda));
        put("beta", fl(self.beta));
        put("k0", fl(self.schedule.k.init));
        put("k_decay", fl(self.schedule.k.decrement));
        put("k_min", fl(self.schedule.k.floor));
        put("mu0", fl(self.schedule.mu.init));
        put("mu_decay", fl(self.schedule.mu.decrement));
        put("mu_min", fl(self.schedule.mu.floor));
        put("schedule_interval", self.schedule.k.interval.to_string());
        if let Some(k) = self.kfac_k {
            put("kfac_k0", fl(k.init));
            put("kfac_k_decay", fl(k.decrement));
            put("kfac_k_min", fl(k.floor));
        }
        put("mu_fc", fl(self.mu_fc));
        put("rms_lr", fl(self.rms_lr));
        put("rms_rho", fl(self.rms_rho));
        put("rms_delta", fl(self.rms_delta));
        put("alpha0", fl(self.alpha.init));
        put("alpha_decay", fl(self.alpha.decrement));
        put("alpha_interval", self.alpha.interval.to_string());
        put("alpha_min", fl(self.alpha.floor));
        put("clip_norm", fl(self.clip_norm));
        put("seed", self.seed.to_string());
        put("network", self.network.name().to_string());
        put(
            "hidden",
            self.hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put(
            "activation",
            match self.activation {
                Activation::Tanh => "tanh",
                Activation::Relu => "relu",
                Activation::Identity => "identity",
            }
            .to_string(),
        );
        put("joint", self.joint.to_string());
        put(
            "entropy_mode",
            match self.entropy_mode {
                EntropyMode::Full => "full",
                EntropyMode::Sampled => "sampled",
            }
            .to_string(),
        );
        put(
            "w_sign",
            match self.w_sign {
                WSign::Descent => "descent",
                WSign::Literal => "literal",
            }
            .to_string(),
        );
        put("log_dir", self.log_dir.display().to_string());
        put(
            "checkpoint",
            self.checkpoint
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("spd_check_every", self.spd_check_every.to_string());
        out
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = TrainConfig::new(Algorithm::Rlssa2c, EnvId::PixelGrid);
        assert_eq!(
            (
                c.gamma,
                c.eta,
                c.workers,
                c.steps,
                c.clip_norm,
                c.lambda,
                c.beta
            ),
            (0.99, 0.01, 32, 5, 0.5, 1.0, 0.5)
        );
        assert_eq!((c.rms_lr, c.rms_rho, c.rms_delta), (0.00025, 0.99, 0.00005));
        assert_eq!(c.batch_size(), 160);
        assert_eq!(
            TrainConfig::new(Algorithm::Rlsna2c, EnvId::PixelGrid).beta,
            0.0
        );
        let p = TrainConfig::new(Algorithm::Rlsna2c, EnvId::PointMass);
        assert_eq!(p.alpha.value(0), 0.001);
        assert_eq!(p.alpha.value(1_000_000), 0.001);
        assert!(!p.joint);
    }

    #[test]
    fn parse_and_round_trip() {
        let text = "# comment\nalgorithm = rlsna2c\nenv = pointmass\nworkers = 8\nhidden = 32, 16\nkfac_k0 = 0.05 # trailing\n";
        let c = TrainConfig::parse(text).unwrap();
        assert_eq!(c.algorithm, Algorithm::Rlsna2c);
        assert_eq!(c.workers, 8);
        assert_eq!(c.hidden, vec![32, 16]);
        assert_eq!(c.kfac_k_schedule().init, 0.05);
        assert_eq!(c.kfac_k_schedule().floor, 0.01);
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn overrides_win_over_file() {
        let over = vec![
            ("seed".to_string(), "7".to_string()),
            ("algorithm".to_string(), "rlssa2c".to_string()),
        ];
        let c = TrainConfig::parse_with_overrides("algorithm = rmsa2c\nseed = 3\n", &over).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.algorithm, Algorithm::Rlssa2c);
        assert_eq!(c.beta, 0.5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::parse("gamma = 0").is_err());
        assert!(TrainConfig::parse("lambda = 1.5").is_err());
        assert!(TrainConfig::parse("nonsense = 1").is_err());
        assert!(TrainConfig::parse("workers 3").is_err());
        assert!(TrainConfig::parse("env = cartpole_lite\nnetwork = reduced_cnn").is_err());
    }
}
