//! Training orchestration for RMSA2C, RLSSA2C and RLSNA2C.

mod agent;
pub mod bench;
pub mod checkpoint;
mod config;
pub mod eval;
mod loss;
mod metrics;

use std::collections::VecDeque;
use std::path::PathBuf;
use std::time::Instant;

pub use agent::{Agent, LayerOptimizer};
pub use config::{Algorithm, NetworkKind, TrainConfig, LOG_DIR_ENV};
pub use loss::{clip_gradients, loss_eval, total_loss_fixed_advantage, LossEval};
pub use metrics::{smooth_log, CsvLogger, MetricsRow, CSV_HEADER};

use crate::envsim::{collect, EnvInstance, RolloutBatch};
use crate::error::{Error, Result};
use crate::numerics::Mat;

/// Episodes averaged by `reward_mean_100`.
pub const REWARD_WINDOW: usize = 100;

/// Runtime record of the RLS denominators and positive-definiteness checks.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityMonitor {
    /// Smallest `(λ + k·xᵀPx) − λ` seen so far.
    pub min_margin: f64,
    pub denominators: u64,
    pub spd_checks: u64,
    pub spd_failures: u64,
}

impl Default for StabilityMonitor {
    fn default() -> Self {
        StabilityMonitor {
            min_margin: f64::INFINITY,
            denominators: 0,
            spd_checks: 0,
            spd_failures: 0,
        }
    }
}

impl StabilityMonitor {
    fn observe(&mut self, denominator: f64, lambda: f64) {
        self.min_margin = self.min_margin.min(denominator - lambda);
        self.denominators += 1;
    }

    /// True while no denominator fell below `λ` and no spot check failed.
    pub fn healthy(&self) -> bool {
        self.spd_failures == 0 && !(self.min_margin < 0.0)
    }
}

/// Complete state of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub agent: Agent,
    pub envs: Vec<EnvInstance>,
    pub iteration: u64,
    pub timesteps: u64,
    pub episodes: u64,
    pub recent_rewards: VecDeque<f64>,
    pub monitor: StabilityMonitor,
    /// Number of parameter updates applied to each layer.
    pub update_counts: Vec<u64>,
    started: Instant,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let agent = Agent::build(&config)?;
        let envs = (0..config.workers as u64)
            .map(|w| EnvInstance::new(config.env, config.seed, w))
            .collect();
        let layers = agent.net.layers().len();
        Ok(Trainer {
            config,
            agent,
            envs,
            iteration: 0,
            timesteps: 0,
            episodes: 0,
            recent_rewards: VecDeque::with_capacity(REWARD_WINDOW),
            monitor: StabilityMonitor::default(),
            update_counts: vec![0; layers],
            started: Instant::now(),
        })
    }

    /// Mean return of the last (up to) 100 finished episodes; NaN before the first.
    pub fn reward_mean_100(&self) -> f64 {
        if self.recent_rewards.is_empty() {
            f64::NAN
        } else {
            self.recent_rewards.iter().sum::<f64>() / self.recent_rewards.len() as f64
        }
    }

    /// Schedule values `(k_t, μ_t, k_t of K-FAC, α_t)` for the next iteration.
    pub fn schedules(&self) -> (f64, f64, f64, f64) {
        let c = &self.config;
        (
            c.schedule.schedule_k(self.iteration),
            c.schedule.schedule_mu(self.iteration),
            c.kfac_k_schedule().value(self.iteration),
            c.alpha.value(self.timesteps),
        )
    }

    /// Collect → targets → loss → critic updates → actor updates.
    pub fn train_iteration(&mut self) -> Result<MetricsRow> {
        let (k, mu, k_kfac, alpha) = self.schedules();
        let mut batch = collect(&mut self.envs, &self.agent.net, self.config.steps)?;
        batch.compute_targets(self.config.gamma);
        let mut eval = self.loss(&batch)?;
        let grad_norm = clip_gradients(&mut eval.grads, self.config.clip_norm);
        if !eval.total.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Diverged {
                iteration: self.iteration,
                detail: format!(
                    "value_loss={} policy_loss={} entropy={} grad_norm={} k={k} mu={mu} alpha={alpha}",
                    eval.value_loss, eval.policy_loss, eval.entropy, grad_norm
                ),
            });
        }
        self.apply_updates(&eval, k, mu, k_kfac, alpha)?;

        for &ret in &batch.finished_episodes {
            if self.recent_rewards.len() == REWARD_WINDOW {
                self.recent_rewards.pop_front();
            }
            self.recent_rewards.push_back(ret);
        }
        self.episodes += batch.finished_episodes.len() as u64;
        self.iteration += 1;
        self.timesteps += batch.len() as u64;
        if self.config.spd_check_every > 0 && self.iteration % self.config.spd_check_every == 0 {
            self.check_positive_definite()?;
        }
        Ok(MetricsRow {
            iteration: self.iteration,
            timesteps: self.timesteps,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
            reward_mean_100: self.reward_mean_100(),
            value_loss: eval.value_loss,
            policy_loss: eval.policy_loss,
            entropy: eval.entropy,
            grad_norm,
            k_t: k,
            mu_t: mu,
            alpha_t: alpha,
        })
    }

    fn loss(&self, batch: &RolloutBatch) -> Result<LossEval> {
        loss_eval(
            &self.agent.net,
            &batch.obs,
            &batch.actions,
            &batch.q,
            self.config.eta,
            self.config.entropy_mode,
        )
    }

    fn apply_updates(
        &mut self,
        eval: &LossEval,
        k: f64,
        mu: f64,
        k_kfac: f64,
        alpha: f64,
    ) -> Result<()> {
        let lambda = self.config.lambda;
        let mu_fc = self.config.mu_fc;
        let order = self.agent.update_order();
        let Agent {
            net,
            optimizers,
            log_std_opt,
        } = &mut self.agent;
        for i in order {
            let cache = &eval.pass.caches[i];
            let grad = &eval.grads.layers[i];
            let layer = net.layer_mut(i);
            match &mut optimizers[i] {
                LayerOptimizer::Rmsprop { weight, bias } => {
                    weight.step(layer.weight.data_mut(), grad.weight.data())?;
                    if let (Some(state), Some(b), Some(g)) =
                        (bias.as_mut(), layer.bias.as_mut(), grad.bias.as_ref())
                    {
                        state.step(b, g)?;
                    }
                }
                LayerOptimizer::RlsCriticOutput(s) => {
                    let info = s.critic_output_step(
                        &mut layer.weight,
                        &grad.weight,
                        &cache.input_rows(),
                        k,
                    )?;
                    self.monitor.observe(info.min_denominator, lambda);
                }
                LayerOptimizer::RlsFc(s) => {
                    let info = s.fc_hidden_step(
                        &mut layer.weight,
                        &grad.weight,
                        &cache.input_rows(),
                        k,
                        mu_fc,
                    )?;
                    self.monitor.observe(info.min_denominator, lambda);
                }
                LayerOptimizer::RlsConv(s) => {
                    let cols = cache
                        .mean_cols()
                        .ok_or_else(|| Error::Shape("conv layer without unfolded inputs".into()))?;
                    let info = s.conv_step(&mut layer.weight, &grad.weight, &cols, k, mu)?;
                    self.monitor.observe(info.min_denominator, lambda);
                }
                LayerOptimizer::Kfac(s) => {
                    let x = cache.input_rows();
                    let x = if layer.bias.is_some() {
                        agent::augment_ones(&x)
                    } else {
                        x
                    };
                    let info = s.w_update(&x, &eval.scores, &eval.advantages, k_kfac)?;
                    self.monitor.observe(info.min_denominator_p1, lambda);
                    self.monitor.observe(info.min_denominator_p2, lambda);
                    let mut theta = stack_bias(&layer.weight, layer.bias.as_deref());
                    s.npg_actor_step(&mut theta, alpha)?;
                    let n = layer.weight.rows();
                    for r in 0..n {
                        layer.weight.row_mut(r).copy_from_slice(theta.row(r));
                    }
                    if let Some(b) = layer.bias.as_mut() {
                        b.copy_from_slice(theta.row(n));
                    }
                }
            }
            if !layer.weight.is_finite() {
                return Err(Error::Diverged {
                    iteration: self.iteration,
                    detail: format!("layer {i} parameters became non-finite"),
                });
            }
            self.update_counts[i] += 1;
        }
        if let (Some(state), Some(ls), Some(g)) = (
            log_std_opt.as_mut(),
            net.log_std.as_mut(),
            eval.grads.log_std.as_ref(),
        ) {
            state.step(ls, g)?;
        }
        Ok(())
    }

    /// Cholesky check of every `P`; records the outcome in the monitor.
    pub fn check_positive_definite(&mut self) -> Result<()> {
        for (i, opt) in self.agent.optimizers.iter().enumerate() {
            for p in opt.p_matrices() {
                self.monitor.spd_checks += 1;
                if !p.is_positive_definite() {
                    self.monitor.spd_failures += 1;
                    return Err(Error::NotPositiveDefinite(format!(
                        "layer {i} ({}) at iteration {}",
                        opt.kind(),
                        self.iteration
                    )));
                }
            }
        }
        Ok(())
    }

    /// Trains until `total_timesteps`, handing every row to `sink`.
    pub fn train(&mut self, mut sink: impl FnMut(&MetricsRow) -> Result<()>) -> Result<()> {
        while self.timesteps + self.config.batch_size() <= self.config.total_timesteps {
            let row = self.train_iteration()?;
            sink(&row)?;
            if let Some(path) = self.config.checkpoint.clone() {
                if self.config.checkpoint_every > 0
                    && self.iteration % self.config.checkpoint_every == 0
                {
                    checkpoint::save(self, &path)?;
                }
            }
        }
        Ok(())
    }
}

fn stack_bias(weight: &Mat, bias: Option<&[f64]>) -> Mat {
    match bias {
        None => weight.clone(),
        Some(b) => Mat::from_fn(weight.rows() + 1, weight.cols(), |i, j| {
            if i < weight.rows() {
                weight[(i, j)]
            } else {
                b[j]
            }
        }),
    }
}

/// Outcome of [`run`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub log_path: PathBuf,
    pub rows: usize,
    pub last: Option<MetricsRow>,
}

/// Trains from `config` (or resumes from `resume`), streaming CSV rows into the log directory.
/// A resumed run appends to the existing log.
pub fn run(config: TrainConfig, resume: Option<&std::path::Path>) -> Result<RunSummary> {
    let mut trainer = match resume {
        Some(path) => {
            let mut t = checkpoint::load(path)?;
            t.config.total_timesteps = config.total_timesteps;
            t
        }
        None => Trainer::new(config)?,
    };
    let dir = trainer.config.resolved_log_dir();
    let log_path = dir.join(format!(
        "{}_{}_seed{}.csv",
        trainer.config.algorithm, trainer.config.env, trainer.config.seed
    ));
    let mut logger = if resume.is_some() {
        CsvLogger::append(&log_path)?
    } else {
        CsvLogger::create(&log_path)?
    };
    let mut rows = 0;
    let mut last = None;
    trainer.train(|row| {
        rows += 1;
        last = Some(row.clone());
        logger.write(row)
    })?;
    logger.flush()?;
    if let Some(path) = trainer.config.checkpoint.clone() {
        checkpoint::save(&trainer, &path)?;
    }
    Ok(RunSummary {
        log_path,
        rows,
        last,
    })
}
