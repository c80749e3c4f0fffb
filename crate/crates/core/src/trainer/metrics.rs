use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "iteration,timesteps,wall_clock_s,reward_mean_100,value_loss,policy_loss,entropy,grad_norm,k_t,mu_t,alpha_t";

/// One logged training iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub timesteps: u64,
    pub wall_clock_s: f64,
    /// NaN until the first episode finishes.
    pub reward_mean_100: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub entropy: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub k_t: f64,
    pub mu_t: f64,
    pub alpha_t: f64,
}

impl MetricsRow {
    fn floats(&self) -> [f64; 8] {
        [
            self.reward_mean_100,
            self.value_loss,
            self.policy_loss,
            self.entropy,
            self.grad_norm,
            self.k_t,
            self.mu_t,
            self.alpha_t,
        ]
    }

    /// Bitwise equality of every field except the wall clock.
    pub fn same_except_clock(&self, other: &MetricsRow) -> bool {
        self.iteration == other.iteration
            && self.timesteps == other.timesteps
            && self
                .floats()
                .iter()
                .zip(other.floats())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn to_csv(&self) -> String {
        // `{:?}` prints the shortest representation that parses back exactly.
        let f = self.floats();
        format!(
            "{},{},{:.3},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.iteration,
            self.timesteps,
            self.wall_clock_s,
            f[0],
            f[1],
            f[2],
            f[3],
            f[4],
            f[5],
            f[6],
            f[7]
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 11 {
            return Err(Error::Config(format!(
                "metrics row with {} columns",
                cols.len()
            )));
        }
        let bad = |c: &str| Error::Config(format!("bad metrics value `{c}`"));
        let u = |c: &str| c.parse::<u64>().map_err(|_| bad(c));
        let f = |c: &str| c.parse::<f64>().map_err(|_| bad(c));
        Ok(MetricsRow {
            iteration: u(cols[0])?,
            timesteps: u(cols[1])?,
            wall_clock_s: f(cols[2])?,
            reward_mean_100: f(cols[3])?,
            value_loss: f(cols[4])?,
            policy_loss: f(cols[5])?,
            entropy: f(cols[6])?,
            grad_norm: f(cols[7])?,
            k_t: f(cols[8])?,
            mu_t: f(cols[9])?,
            alpha_t: f(cols[10])?,
        })
    }
}

/// Streams rows to a CSV file, header first.
pub struct CsvLogger {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvLogger {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut logger = CsvLogger {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        writeln!(logger.out, "{CSV_HEADER}").map_err(|e| Error::io(path, e))?;
        logger.flush()?;
        Ok(logger)
    }

    /// Appends to an existing log, or creates it when missing.
    pub fn append(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Self::create(path);
        }
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(CsvLogger {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv()).map_err(|e| Error::io(&self.path, e))?;
        self.flush()
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a training log and returns `timesteps,reward_mean_100` followed by
/// the losses, entropy and gradient norm averaged over the trailing `window` rows.
pub fn smooth_log(text: &str, window: usize) -> Result<String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Config(
                "log does not start with the metrics header".into(),
            ))
        }
    }
    let rows: Vec<MetricsRow> = lines
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRow::from_csv)
        .collect::<Result<_>>()?;
    let window = window.max(1);
    let mut out = String::from("timesteps,reward_mean_100,value_loss_smooth,policy_loss_smooth,entropy_smooth,grad_norm_smooth\n");
    for (i, row) in rows.iter().enumerate() {
        let span = &rows[i.saturating_sub(window - 1)..=i];
        let mean = |f: fn(&MetricsRow) -> f64| span.iter().map(f).sum::<f64>() / span.len() as f64;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.timesteps,
            row.reward_mean_100,
            mean(|r| r.value_loss),
            mean(|r| r.policy_loss),
            mean(|r| r.entropy),
            mean(|r| r.grad_norm)
        ));
    }
    Ok(out)
}
