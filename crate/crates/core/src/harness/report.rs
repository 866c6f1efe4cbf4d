//! CSV emission for experiment results.

use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::{NllTrajectory, RatePoint, Replication};

pub const RATE_HEADER: [&str; 6] = ["n", "mean_d2", "std_d2", "replications", "status_ok", "status_failed"];

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per grid point. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_rate_csv(points: &[RatePoint], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(RATE_HEADER)?;
    for p in points {
        w.write_record([
            p.n.to_string(),
            p.mean_loss.to_string(),
            p.std_loss.to_string(),
            (p.replications + p.failed).to_string(),
            p.replications.to_string(),
            p.failed.to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn parse_rate_csv(path: &Path) -> Result<Vec<RatePoint>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    if r.headers()?.iter().ne(RATE_HEADER) {
        return Err(Error::contract(format!("{}: unexpected rate CSV header", path.display())));
    }
    let bad = |what: &str| Error::contract(format!("{}: bad field `{what}`", path.display()));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let int = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(&rec[i]));
        let float = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(&rec[i]));
        out.push(RatePoint {
            n: int(0)?,
            mean_loss: float(1)?,
            std_loss: float(2)?,
            replications: int(4)?,
            failed: int(5)?,
        });
    }
    Ok(out)
}

/// Per-replication record with a `status` column (`ok` or the error).
pub fn write_replications_csv(reps: &[Replication], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["n", "replication", "d2", "iterations", "converged", "status"])?;
    for r in reps {
        w.write_record([
            r.n.to_string(),
            r.replication.to_string(),
            r.loss.map_or_else(String::new, |v| v.to_string()),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.error.clone().map_or_else(|| "ok".to_string(), |e| format!("failed: {e}")),
        ])?;
    }
    finish(w, path)
}

/// Long format: `gate,iteration,nll`.
pub fn write_nll_csv(trajectories: &[NllTrajectory], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["gate", "iteration", "nll"])?;
    for t in trajectories {
        for (i, v) in t.nll.iter().enumerate() {
            w.write_record([t.gate.to_string(), i.to_string(), v.to_string()])?;
        }
    }
    finish(w, path)
}
