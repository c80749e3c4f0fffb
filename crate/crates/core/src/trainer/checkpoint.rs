//! Binary checkpoints.
//!
//! Layout (all integers and doubles little-endian):
//!
//! ```text
//! magic    8 bytes  "RLSA2CKP"
//! version  u32      currently 1
//! count    u32      number of sections
//! section  name_len u32, name (UTF-8), payload_len u64, payload
//! ```
//!
//! Sections, in order: `config` (the text config), `counters` (iteration,
//! timesteps, episodes as u64), `params` (every parameter buffer), `optimizers`
//! (one tagged record per layer), `log_std_opt`, `envs` (physical state plus
//! ChaCha seed, stream and word position per worker), `rewards` (the
//! trailing episode returns), `monitor` and `update_counts`.
//! Arrays are written as a u64 length followed by the elements; matrices as
//! u64 rows, u64 cols and the row-major data.
//!
//! Wall-clock time is not stored; a resumed run restarts its clock at zero.

use std::collections::VecDeque;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kfacnpg::{KfacActorState, WSign};
use crate::numerics::{Mat, SpdMat};
use crate::optim::{RlsLayerState, RmspropState};

use super::{LayerOptimizer, StabilityMonitor, TrainConfig, Trainer};

pub const MAGIC: &[u8; 8] = b"RLSA2CKP";
pub const VERSION: u32 = 1;

const SECTIONS: [&str; 9] = [
    "config",
    "counters",
    "params",
    "optimizers",
    "log_std_opt",
    "envs",
    "rewards",
    "monitor",
    "update_counts",
];

pub fn save(trainer: &Trainer, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_bytes(trainer)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

pub fn to_bytes(t: &Trainer) -> Vec<u8> {
    let mut sections: Vec<(&str, Writer)> =
        SECTIONS.iter().map(|&n| (n, Writer::default())).collect();
    sections[0].1.bytes(t.config.to_text().as_bytes());

    let w = &mut sections[1].1;
    w.u64(t.iteration);
    w.u64(t.timesteps);
    w.u64(t.episodes);

    let w = &mut sections[2].1;
    let buffers = t.agent.net.param_buffers();
    w.u32(buffers.len() as u32);
    for b in buffers {
        w.f64s(b);
    }

    let w = &mut sections[3].1;
    w.u32(t.agent.optimizers.len() as u32);
    for opt in &t.agent.optimizers {
        match opt {
            LayerOptimizer::Rmsprop { weight, bias } => {
                w.u8(0);
                w.f64s(&weight.accum);
                w.opt_f64s(bias.as_ref().map(|b| b.accum.as_slice()));
            }
            LayerOptimizer::RlsCriticOutput(s)
            | LayerOptimizer::RlsFc(s)
            | LayerOptimizer::RlsConv(s) => {
                w.u8(match opt {
                    LayerOptimizer::RlsCriticOutput(_) => 1,
                    LayerOptimizer::RlsFc(_) => 2,
                    _ => 3,
                });
                w.mat(s.p.as_mat());
                w.mat(&s.velocity);
                w.f64(s.beta);
                w.f64(s.lambda);
            }
            LayerOptimizer::Kfac(s) => {
                w.u8(4);
                w.mat(s.p1.as_mat());
                w.mat(s.p2.as_mat());
                w.mat(&s.w);
                w.f64(s.lambda);
                w.u8(match s.sign {
                    WSign::Descent => 0,
                    WSign::Literal => 1,
                });
            }
        }
    }

    sections[4]
        .1
        .opt_f64s(t.agent.log_std_opt.as_ref().map(|s| s.accum.as_slice()));

    let w = &mut sections[5].1;
    w.u32(t.envs.len() as u32);
    for env in &t.envs {
        w.f64s(&env.export_state());
        let rng = env.rng();
        w.raw(&rng.get_seed());
        w.u64(rng.get_stream());
        w.raw(&rng.get_word_pos().to_le_bytes());
    }

    sections[6]
        .1
        .f64s(&t.recent_rewards.iter().copied().collect::<Vec<_>>());

    let w = &mut sections[7].1;
    w.f64(t.monitor.min_margin);
    w.u64(t.monitor.denominators);
    w.u64(t.monitor.spd_checks);
    w.u64(t.monitor.spd_failures);

    let w = &mut sections[8].1;
    w.u64(t.update_counts.len() as u64);
    for &c in &t.update_counts {
        w.u64(c);
    }

    let mut out = Writer::default();
    out.raw(MAGIC);
    out.u32(VERSION);
    out.u32(sections.len() as u32);
    for (name, payload) in sections {
        out.bytes(name.as_bytes());
        out.u64(payload.0.len() as u64);
        out.raw(&payload.0);
    }
    out.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<Trainer> {
    let mut r = Reader::new(bytes);
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = r.u32()? as usize;
    if count != SECTIONS.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} sections, found {count}",
            SECTIONS.len()
        )));
    }
    let mut payloads = Vec::with_capacity(count);
    for expected in SECTIONS {
        let name = r.bytes()?;
        if name != expected.as_bytes() {
            return Err(Error::Checkpoint(format!(
                "expected section `{expected}`, found `{}`",
                String::from_utf8_lossy(name)
            )));
        }
        let len = r.u64()? as usize;
        payloads.push(Reader::new(r.take(len)?));
    }
    r.finish()?;
    let mut p = payloads.into_iter();
    let mut next = || p.next().expect("section count checked");

    let mut s = next();
    let text = std::str::from_utf8(s.bytes()?)
        .map_err(|e| Error::Checkpoint(format!("config is not UTF-8: {e}")))?;
    let config = TrainConfig::parse(text)?;
    s.finish()?;
    let mut t = Trainer::new(config)?;

    let mut s = next();
    t.iteration = s.u64()?;
    t.timesteps = s.u64()?;
    t.episodes = s.u64()?;
    s.finish()?;

    let mut s = next();
    let n = s.u32()? as usize;
    let mut buffers = t.agent.net.param_buffers_mut();
    if n != buffers.len() {
        return Err(Error::Checkpoint(format!(
            "{n} parameter buffers for a network with {}",
            buffers.len()
        )));
    }
    for b in buffers.iter_mut() {
        let v = s.f64s()?;
        if v.len() != b.len() {
            return Err(Error::Checkpoint("parameter buffer length mismatch".into()));
        }
        b.copy_from_slice(&v);
    }
    s.finish()?;

    let mut s = next();
    let n = s.u32()? as usize;
    if n != t.agent.optimizers.len() {
        return Err(Error::Checkpoint(format!(
            "{n} optimizer records for {} layers",
            t.agent.optimizers.len()
        )));
    }
    for opt in t.agent.optimizers.iter_mut() {
        let tag = s.u8()?;
        let restored = match (tag, &*opt) {
            (0, LayerOptimizer::Rmsprop { weight, bias }) => {
                let mut weight = weight.clone();
                weight.accum = same_len(s.f64s()?, weight.accum.len())?;
                let saved = s.opt_f64s()?;
                let bias = match (bias, saved) {
                    (Some(b), Some(acc)) => Some(RmspropState {
                        accum: same_len(acc, b.accum.len())?,
                        ..b.clone()
                    }),
                    (None, None) => None,
                    _ => return Err(Error::Checkpoint("bias accumulator mismatch".into())),
                };
                LayerOptimizer::Rmsprop { weight, bias }
            }
            (
                1..=3,
                LayerOptimizer::RlsCriticOutput(old)
                | LayerOptimizer::RlsFc(old)
                | LayerOptimizer::RlsConv(old),
            ) => {
                let p = spd(s.mat()?, old.p.dim())?;
                let velocity = s.mat()?;
                if velocity.shape() != old.velocity.shape() {
                    return Err(Error::Checkpoint("velocity shape mismatch".into()));
                }
                let state = RlsLayerState {
                    p,
                    velocity,
                    beta: s.f64()?,
                    lambda: s.f64()?,
                };
                match tag {
                    1 => LayerOptimizer::RlsCriticOutput(state),
                    2 => LayerOptimizer::RlsFc(state),
                    _ => LayerOptimizer::RlsConv(state),
                }
            }
            (4, LayerOptimizer::Kfac(old)) => {
                let p1 = spd(s.mat()?, old.p1.dim())?;
                let p2 = spd(s.mat()?, old.p2.dim())?;
                let w = s.mat()?;
                if w.shape() != old.w.shape() {
                    return Err(Error::Checkpoint(
                        "compatible parameter shape mismatch".into(),
                    ));
                }
                let lambda = s.f64()?;
                let sign = match s.u8()? {
                    0 => WSign::Descent,
                    1 => WSign::Literal,
                    other => return Err(Error::Checkpoint(format!("unknown sign tag {other}"))),
                };
                LayerOptimizer::Kfac(KfacActorState {
                    p1,
                    p2,
                    w,
                    alpha: old.alpha,
                    lambda,
                    sign,
                })
            }
            (tag, other) => {
                return Err(Error::Checkpoint(format!(
                    "optimizer tag {tag} does not match a {} layer",
                    other.kind()
                )));
            }
        };
        *opt = restored;
    }
    s.finish()?;

    let mut s = next();
    match (t.agent.log_std_opt.as_mut(), s.opt_f64s()?) {
        (Some(state), Some(acc)) => state.accum = same_len(acc, state.accum.len())?,
        (None, None) => {}
        _ => return Err(Error::Checkpoint("log-std optimizer mismatch".into())),
    }
    s.finish()?;

    let mut s = next();
    let n = s.u32()? as usize;
    if n != t.envs.len() {
        return Err(Error::Checkpoint(format!(
            "{n} environments for {} workers",
            t.envs.len()
        )));
    }
    for env in t.envs.iter_mut() {
        let state = s.f64s()?;
        let seed: [u8; 32] = s.take(32)?.try_into().expect("32 bytes");
        let stream = s.u64()?;
        let word_pos = u128::from_le_bytes(s.take(16)?.try_into().expect("16 bytes"));
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        env.import_state(&state, rng)?;
    }
    s.finish()?;

    let mut s = next();
    t.recent_rewards = VecDeque::from(s.f64s()?);
    s.finish()?;

    let mut s = next();
    t.monitor = StabilityMonitor {
        min_margin: s.f64()?,
        denominators: s.u64()?,
        spd_checks: s.u64()?,
        spd_failures: s.u64()?,
    };
    s.finish()?;

    let mut s = next();
    let n = s.u64()? as usize;
    if n != t.update_counts.len() {
        return Err(Error::Checkpoint("update counter length mismatch".into()));
    }
    for c in t.update_counts.iter_mut() {
        *c = s.u64()?;
    }
    s.finish()?;
    Ok(t)
}

fn same_len(v: Vec<f64>, len: usize) -> Result<Vec<f64>> {
    if v.len() != len {
        return Err(Error::Checkpoint(format!(
            "array of length {} where {len} was expected",
            v.len()
        )));
    }
    Ok(v)
}

fn spd(m: Mat, dim: usize) -> Result<SpdMat> {
    if m.shape() != (dim, dim) || !m.is_finite() {
        return Err(Error::Checkpoint(format!(
            "P matrix of shape {:?} where {dim}x{dim} was expected",
            m.shape()
        )));
    }
    Ok(SpdMat::from_mat_unchecked(m))
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn raw(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.raw(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.raw(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.raw(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.raw(b);
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f64(*x));
    }
    fn opt_f64s(&mut self, v: Option<&[f64]>) {
        match v {
            Some(v) => {
                self.u8(1);
                self.f64s(v);
            }
            None => self.u8(0),
        }
    }
    fn mat(&mut self, m: &Mat) {
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        m.data().iter().for_each(|x| self.f64(*x));
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Checkpoint(
                "trailing bytes in checkpoint section".into(),
            ));
        }
        Ok(())
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > (self.data.len() - self.pos) / 8 {
            return Err(Error::Checkpoint(
                "array length exceeds section size".into(),
            ));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn opt_f64s(&mut self) -> Result<Option<Vec<f64>>> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.f64s()?)),
            other => Err(Error::Checkpoint(format!("bad option tag {other}"))),
        }
    }
    fn mat(&mut self) -> Result<Mat> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= (self.data.len() - self.pos) / 8);
        let n = n.ok_or_else(|| Error::Checkpoint("matrix exceeds section size".into()))?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Mat::from_vec(rows, cols, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::EnvId;
    use crate::trainer::Algorithm;

    fn trained(algorithm: Algorithm, env: EnvId, iterations: usize) -> Trainer {
        let mut c = TrainConfig::new(algorithm, env);
        c.workers = 3;
        c.seed = 5;
        let mut t = Trainer::new(c).unwrap();
        for _ in 0..iterations {
            t.train_iteration().unwrap();
        }
        t
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for algorithm in Algorithm::ALL {
            for env in [EnvId::PointMass, EnvId::PixelGrid] {
                let t = trained(algorithm, env, 3);
                let bytes = to_bytes(&t);
                assert_eq!(to_bytes(&from_bytes(&bytes).unwrap()), bytes);
            }
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = to_bytes(&trained(Algorithm::Rlssa2c, EnvId::CartPoleLite, 1));
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 9;
        assert!(from_bytes(&bad).is_err());
    }
}
