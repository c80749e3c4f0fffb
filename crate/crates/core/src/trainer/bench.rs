//! Throughput comparison of the three algorithms and per-layer update overheads.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::network::LayerKind;
use crate::optim::RmspropState;

use super::{Algorithm, LayerOptimizer, TrainConfig, Trainer};

#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputRow {
    pub algorithm: Algorithm,
    pub timesteps_per_sec: f64,
    /// Throughput divided by the RMSA2C throughput.
    pub ratio: f64,
}

/// Cost of one layer's RLS (or K-FAC) update relative to an RMSProp update,
/// both including the layer's backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerOverhead {
    pub layer: usize,
    pub kind: &'static str,
    pub analytic: f64,
    pub measured: f64,
}

impl LayerOverhead {
    /// Measured factor within `tolerance`× of the analytic one (either direction).
    pub fn within(&self, tolerance: f64) -> bool {
        self.measured <= self.analytic * tolerance && self.measured >= self.analytic / tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub env: String,
    pub batch: usize,
    pub throughput: Vec<ThroughputRow>,
    pub overheads: Vec<LayerOverhead>,
}

impl BenchReport {
    pub fn ratio(&self, algorithm: Algorithm) -> Option<f64> {
        self.throughput
            .iter()
            .find(|r| r.algorithm == algorithm)
            .map(|r| r.ratio)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "env {} batch {}", self.env, self.batch);
        let _ = writeln!(
            s,
            "{:<10} {:>14} {:>10}",
            "algorithm", "timesteps/s", "vs rmsa2c"
        );
        for r in &self.throughput {
            let _ = writeln!(
                s,
                "{:<10} {:>14.1} {:>10.3}",
                r.algorithm, r.timesteps_per_sec, r.ratio
            );
        }
        let _ = writeln!(
            s,
            "{:<6} {:<18} {:>10} {:>10}",
            "layer", "update", "analytic", "measured"
        );
        for o in &self.overheads {
            let _ = writeln!(
                s,
                "{:<6} {:<18} {:>10.3} {:>10.3}",
                o.layer, o.kind, o.analytic, o.measured
            );
        }
        s
    }
}

/// Runs `iterations` training iterations per algorithm after `warmup` ones,
/// then measures the per-layer overheads of the RLSNA2C update rules.
pub fn bench(config: &TrainConfig, warmup: usize, iterations: usize) -> Result<BenchReport> {
    if iterations == 0 {
        return Err(Error::Config(
            "bench needs at least one timed iteration".into(),
        ));
    }
    let mut throughput = Vec::new();
    for algorithm in Algorithm::ALL {
        let mut c = config.clone();
        c.set("algorithm", algorithm.name())?;
        let mut t = Trainer::new(c)?;
        for _ in 0..warmup {
            t.train_iteration()?;
        }
        let start = Instant::now();
        for _ in 0..iterations {
            t.train_iteration()?;
        }
        let secs = start.elapsed().as_secs_f64();
        throughput.push(ThroughputRow {
            algorithm,
            timesteps_per_sec: (iterations * config.workers * config.steps) as f64 / secs,
            ratio: 0.0,
        });
    }
    let base = throughput[0].timesteps_per_sec;
    throughput
        .iter_mut()
        .for_each(|r| r.ratio = r.timesteps_per_sec / base);

    let mut c = config.clone();
    c.set("algorithm", "rlsna2c")?;
    let overheads = layer_overheads(c, warmup.max(1))?;
    Ok(BenchReport {
        env: config.env.to_string(),
        batch: config.workers * config.steps,
        throughput,
        overheads,
    })
}

/// Analytic cost of an RLS update relative to SGD for one layer.
pub fn analytic_factor(
    kind: &LayerKind,
    opt: &LayerOptimizer,
    fan_in: usize,
    outputs: usize,
    batch: usize,
) -> f64 {
    let m = batch as f64;
    match (opt, kind) {
        (LayerOptimizer::RlsConv(_), LayerKind::Conv(g)) => {
            1.0 + g.patch_len() as f64 / (m * g.out_pixels() as f64)
        }
        (LayerOptimizer::Kfac(_), _) => 2.0 + (fan_in * outputs) as f64 / m,
        (LayerOptimizer::Rmsprop { .. }, _) => 1.0,
        _ => 1.0 + fan_in as f64 / m,
    }
}

fn layer_overheads(config: TrainConfig, warmup: usize) -> Result<Vec<LayerOverhead>> {
    let mut t = Trainer::new(config)?;
    for _ in 0..warmup {
        t.train_iteration()?;
    }
    let mut batch = crate::envsim::collect(&mut t.envs, &t.agent.net, t.config.steps)?;
    batch.compute_targets(t.config.gamma);
    let eval = t.loss(&batch)?;
    let (k, mu, k_kfac, alpha) = t.schedules();
    let m = batch.len();
    let mut out = Vec::new();
    for (i, opt) in t.agent.optimizers.iter().enumerate() {
        if matches!(opt, LayerOptimizer::Rmsprop { .. }) {
            continue;
        }
        let layer = &t.agent.net.layers()[i];
        let cache = &eval.pass.caches[i];
        let grad = &eval.grads.layers[i];
        let d_out = vec![1.0; cache.output.data().len()];
        let backward = time(|| {
            let _ = layer.backward(cache, &d_out);
        });
        let mut rms = RmspropState::new(layer.weight.data().len(), 1e-3, 0.99, 1e-5);
        let mut w = layer.weight.clone();
        let rmsprop = time(|| {
            let _ = rms.step(w.data_mut(), grad.weight.data());
        });
        let mut state = opt.clone();
        let mut w = layer.weight.clone();
        let mut bias = layer.bias.clone();
        let mut failed = None;
        let rls = time(|| {
            let r = match &mut state {
                LayerOptimizer::RlsCriticOutput(s) => s
                    .critic_output_step(&mut w, &grad.weight, &cache.input_rows(), k)
                    .map(drop),
                LayerOptimizer::RlsFc(s) => s
                    .fc_hidden_step(&mut w, &grad.weight, &cache.input_rows(), k, t.config.mu_fc)
                    .map(drop),
                LayerOptimizer::RlsConv(s) => match cache.mean_cols() {
                    Some(cols) => s.conv_step(&mut w, &grad.weight, &cols, k, mu).map(drop),
                    None => Err(Error::Shape("conv cache without unfolded inputs".into())),
                },
                LayerOptimizer::Kfac(s) => {
                    let x = cache.input_rows();
                    let x = if bias.is_some() {
                        super::agent::augment_ones(&x)
                    } else {
                        x
                    };
                    s.w_update(&x, &eval.scores, &eval.advantages, k_kfac)
                        .and_then(|_| {
                            let mut theta = super::stack_bias(&w, bias.as_deref());
                            s.npg_actor_step(&mut theta, alpha)?;
                            if let Some(b) = bias.as_mut() {
                                b.copy_from_slice(theta.row(w.rows()));
                            }
                            Ok(())
                        })
                }
                LayerOptimizer::Rmsprop { .. } => Ok(()),
            };
            if let Err(e) = r {
                failed.get_or_insert(e);
            }
        });
        if let Some(e) = failed {
            return Err(e);
        }
        // Conv weights are stored as `C·Hᵏ·Wᵏ × C_out`, so columns are the outputs in both cases.
        let outputs = layer.weight.cols();
        let fan_in = layer.fan_in()
            + usize::from(matches!(opt, LayerOptimizer::Kfac(_)) && layer.bias.is_some());
        out.push(LayerOverhead {
            layer: i,
            kind: opt.kind(),
            analytic: analytic_factor(&layer.kind, opt, fan_in, outputs, m),
            measured: (backward + rls) / (backward + rmsprop),
        });
    }
    Ok(out)
}

/// Median over trials of the mean time per call, in seconds.
fn time(mut f: impl FnMut()) -> f64 {
    f();
    let calibrate = Instant::now();
    f();
    let once = calibrate.elapsed().as_secs_f64().max(1e-7);
    let reps = ((2e-3 / once) as usize).clamp(1, 10_000);
    let mut trials: Vec<f64> = (0..7)
        .map(|_| {
            let start = Instant::now();
            for _ in 0..reps {
                f();
            }
            start.elapsed().as_secs_f64() / reps as f64
        })
        .collect();
    trials.sort_by(|a, b| a.total_cmp(b));
    trials[trials.len() / 2]
}
