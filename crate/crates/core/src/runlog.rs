//! Per-episode run records, CSV output and config fingerprints.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HomdpError, Result};
use crate::planner::Budget;

/// Knobs shared by every learner run.
#[derive(Clone, Copy, Debug)]
pub struct RunConfig {
    /// `K`: episodes for HOP-B, total episodes (`H` per epoch) for HOP-V.
    pub episodes: usize,
    pub delta: f64,
    pub budget: Budget,
}

impl RunConfig {
    pub fn new(episodes: usize, delta: f64) -> Self {
        Self { episodes, delta, budget: Budget::default() }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(HomdpError::InvalidArgument("K must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(HomdpError::InvalidArgument(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Hopb,
    HopbMle,
    Hopv,
    Random,
    Optimal,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Hopb => "hopb",
            Algorithm::HopbMle => "hopb-mle",
            Algorithm::Hopv => "hopv",
            Algorithm::Random => "random",
            Algorithm::Optimal => "optimal",
        }
    }

    /// HOP-V logs one row per epoch; everything else one row per episode.
    pub fn is_epochal(self) -> bool {
        self == Algorithm::Hopv
    }
}

/// One episode (or HOP-V epoch) of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    /// 1-based episode or epoch index.
    pub k: usize,
    pub value_opt: f64,
    /// Exact value of the policy selected at `k`, on the true model.
    pub value_hat: f64,
    /// Value the learner planned for, under its own optimistic model.
    pub optimistic_value: f64,
    pub regret_step: f64,
    pub regret_cum: f64,
    pub max_bonus_x: Option<f64>,
    pub max_bonus_xa: Option<f64>,
    pub surviving_t: Option<usize>,
    pub surviving_o: Option<usize>,
    pub wallclock_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub algorithm: Algorithm,
    pub fingerprint: String,
    pub rows: Vec<RunRow>,
    /// Non-fatal diagnostics, e.g. a class that does not contain the truth.
    pub warnings: Vec<String>,
}

const EPISODE_COLUMNS: [&str; 9] = [
    "k",
    "value_opt",
    "value_hat",
    "optimistic_value",
    "regret_step",
    "regret_cum",
    "max_bonus_x",
    "max_bonus_xa",
    "wallclock_ms",
];

const EPOCH_COLUMNS: [&str; 7] = [
    "epoch",
    "value_opt",
    "value_hat",
    "optimistic_value",
    "surviving_T",
    "surviving_O",
    "regret_cum",
];

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl RunLog {
    pub fn new(algorithm: Algorithm, fingerprint: String) -> Self {
        Self { algorithm, fingerprint, rows: Vec::new(), warnings: Vec::new() }
    }

    /// Appends a row, filling in the cumulative regret.
    pub fn push(&mut self, mut row: RunRow) {
        row.regret_cum = self.regret_cum() + row.regret_step;
        self.rows.push(row);
    }

    pub fn regret_cum(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.regret_cum)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn columns(&self) -> Vec<&'static str> {
        if self.algorithm.is_epochal() {
            EPOCH_COLUMNS.to_vec()
        } else {
            EPISODE_COLUMNS.to_vec()
        }
    }

    fn record(&self, row: &RunRow) -> Vec<String> {
        if self.algorithm.is_epochal() {
            vec![
                row.k.to_string(),
                fmt_f(row.value_opt),
                fmt_f(row.value_hat),
                fmt_f(row.optimistic_value),
                fmt_opt(row.surviving_t),
                fmt_opt(row.surviving_o),
                fmt_f(row.regret_cum),
            ]
        } else {
            vec![
                row.k.to_string(),
                fmt_f(row.value_opt),
                fmt_f(row.value_hat),
                fmt_f(row.optimistic_value),
                fmt_f(row.regret_step),
                fmt_f(row.regret_cum),
                fmt_opt(row.max_bonus_x),
                fmt_opt(row.max_bonus_xa),
                format!("{:.3}", row.wallclock_ms),
            ]
        }
    }

    /// Writes the algorithm's CSV schema. With `with_fingerprint`, a
    /// trailing `fingerprint` column repeats the config hash on every row.
    pub fn write_csv<W: Write>(&self, out: W, with_fingerprint: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.columns();
        if with_fingerprint {
            header.push("fingerprint");
        }
        w.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = self.record(row);
            if with_fingerprint {
                rec.push(self.fingerprint.clone());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, with_fingerprint: bool) -> Result<()> {
        self.write_csv(File::create(path)?, with_fingerprint)
    }

    pub fn to_csv_string(&self, with_fingerprint: bool) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, with_fingerprint).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

fn csv_err(e: csv::Error) -> HomdpError {
    HomdpError::Io(std::io::Error::other(e))
}

/// Stable content hash of any serializable config: SHA-256 of its JSON
/// encoding (object keys sorted), truncated to 16 hex digits.
pub fn fingerprint(value: &impl Serialize) -> String {
    let v = serde_json::to_value(value).expect("config serializes");
    let bytes = serde_json::to_vec(&v).expect("value serializes");
    let digest = Sha256::digest(&bytes);
    hex::encode(&digest[..8])
}

/// Fingerprint of one learner run: true model, algorithm, its parameters
/// and the seed.
pub fn run_fingerprint(
    algorithm: Algorithm,
    model: &crate::model::HomdpModel,
    params: serde_json::Value,
    seed: u64,
) -> String {
    fingerprint(&serde_json::json!({
        "algorithm": algorithm.name(),
        "model": crate::io::ModelFile::from(model),
        "params": params,
        "seed": seed,
    }))
}
