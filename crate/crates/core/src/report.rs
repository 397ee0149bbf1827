//! CSV emission and run manifests.
//!
//! Raw regret file: `policy,seed,task,round,inst_regret,cum_regret`, one row
//! per round, rounds numbered from 1. Floats are written with 17 significant
//! digits so the file parses back to the identical log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runner::{RegretCurve, RegretLog, TaskTrace, WErrorCurve};
use crate::subspace::fmt_f64;

pub const REGRET_HEADER: [&str; 6] = ["policy", "seed", "task", "round", "inst_regret", "cum_regret"];
pub const SUMMARY_HEADER: [&str; 4] = ["policy", "round", "mean_cum_regret", "stderr"];
pub const TASK_SUMMARY_HEADER: [&str; 4] = ["policy", "task", "mean_cum_regret", "stderr"];

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(f)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            file: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

fn finish(path: &Path, w: csv::Writer<BufWriter<File>>) -> Result<()> {
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

/// Writes every round of `log`.
pub fn write_regret_csv(log: &RegretLog, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(REGRET_HEADER).map_err(e)?;
    for tr in &log.traces {
        let (seed, task) = (tr.seed.to_string(), tr.task.to_string());
        let mut cum = 0.0;
        for (k, &r) in tr.inst_regret.iter().enumerate() {
            cum += r;
            w.write_record([
                log.policy.as_str(),
                &seed,
                &task,
                &(k + 1).to_string(),
                &fmt_f64(r),
                &fmt_f64(cum),
            ])
            .map_err(e)?;
        }
    }
    finish(path, w)
}

/// Parses a file written by [`write_regret_csv`]. The config hash is not
/// stored in the CSV and comes back empty.
pub fn read_regret_csv(path: &Path) -> Result<RegretLog> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(f);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(REGRET_HEADER) {
        return Err(Error::Parse {
            file: path.to_path_buf(),
            line: 1,
            msg: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut log = RegretLog {
        policy: String::new(),
        config_hash: String::new(),
        traces: Vec::new(),
        failed_seeds: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let bad = |msg: String| Error::Parse {
            file: path.to_path_buf(),
            line,
            msg,
        };
        if rec.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", rec.len())));
        }
        let num = |j: usize| -> Result<f64> { rec[j].parse().map_err(|_| bad(format!("bad number {:?}", &rec[j]))) };
        let int = |j: usize| -> Result<u64> { rec[j].parse().map_err(|_| bad(format!("bad integer {:?}", &rec[j]))) };
        if log.traces.is_empty() {
            log.policy = rec[0].to_string();
        } else if rec[0] != log.policy {
            return Err(bad(format!("mixed policies {:?} and {:?}", log.policy, &rec[0])));
        }
        let (seed, task, round) = (int(1)?, int(2)? as usize, int(3)? as usize);
        let r = num(4)?;
        let new_trace = match log.traces.last() {
            Some(t) => t.seed != seed || t.task != task,
            None => true,
        };
        if new_trace {
            log.traces.push(TaskTrace {
                seed,
                task,
                inst_regret: Vec::new(),
            });
        }
        let tr = log.traces.last_mut().expect("pushed above");
        if round != tr.inst_regret.len() + 1 {
            return Err(bad(format!("round {round} out of sequence")));
        }
        tr.inst_regret.push(r);
    }
    Ok(log)
}

/// One row of a summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: String,
    /// Round or task index, starting at 1.
    pub index: usize,
    pub mean: f64,
    pub stderr: f64,
}

pub fn curve_rows(policy: &str, curve: &RegretCurve) -> Vec<SummaryRow> {
    curve
        .mean
        .iter()
        .zip(&curve.stderr)
        .enumerate()
        .map(|(i, (&mean, &stderr))| SummaryRow {
            policy: policy.to_string(),
            index: i + 1,
            mean,
            stderr,
        })
        .collect()
}

fn write_rows(path: &Path, header: [&str; 4], rows: &[SummaryRow]) -> Result<()> {
    let mut w = writer(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(header).map_err(e)?;
    for r in rows {
        w.write_record([
            r.policy.as_str(),
            &r.index.to_string(),
            &fmt_f64(r.mean),
            &fmt_f64(r.stderr),
        ])
        .map_err(e)?;
    }
    finish(path, w)
}

/// `policy,round,mean_cum_regret,stderr`.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(path, SUMMARY_HEADER, rows)
}

/// `policy,task,mean_cum_regret,stderr`.
pub fn write_task_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(path, TASK_SUMMARY_HEADER, rows)
}

/// `q,p,mean_total_regret,stderr,seeds`.
pub fn write_rank_sweep_csv(path: &Path, dim: usize, points: &[(usize, RegretLog)]) -> Result<()> {
    let mut w = writer(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(["q", "p", "mean_total_regret", "stderr", "seeds"]).map_err(e)?;
    for (q, log) in points {
        let (m, se) = log.mean_total();
        w.write_record([
            q.to_string(),
            (dim - q).to_string(),
            fmt_f64(m),
            fmt_f64(se),
            log.seeds().len().to_string(),
        ])
        .map_err(e)?;
    }
    finish(path, w)
}

/// `seed,task,init,learned_rel_error,full_bias_rel_error`.
pub fn write_w_error_csv(path: &Path, curve: &WErrorCurve) -> Result<()> {
    let mut w = writer(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(["seed", "task", "init", "learned_rel_error", "full_bias_rel_error"])
        .map_err(e)?;
    for r in &curve.rows {
        w.write_record([
            r.seed.to_string(),
            (r.task + 1).to_string(),
            r.init.to_string(),
            fmt_f64(r.learned),
            fmt_f64(r.full_bias),
        ])
        .map_err(e)?;
    }
    finish(path, w)
}

/// `<stem>-<first 12 hex digits of hash>.<ext>`.
pub fn tagged_name(stem: &str, hash: &str, ext: &str) -> String {
    let short = &hash[..hash.len().min(12)];
    format!("{stem}-{short}.{ext}")
}

/// Everything needed to trace an output file back to the run that made it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub environment: serde_json::Value,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<(u64, String)>,
    /// Unix seconds at start.
    pub started_at: u64,
    pub wall_clock_secs: f64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}
