//! Per-step CSV training log.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::objective::LossBreakdown;

pub const LOG_HEADER: &str = "step,l_cls,l_cen,l_rank,total,lr,stage,epoch";

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    /// Steps completed after this update.
    pub step: usize,
    pub epoch: usize,
    pub stage: String,
    pub lr: f64,
    pub loss: LossBreakdown,
}

pub fn write_log_csv<W: Write>(w: &mut W, rows: &[LogRow], header: bool) -> Result<()> {
    if header {
        writeln!(w, "{LOG_HEADER}")?;
    }
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.step, r.loss.l_cls, r.loss.l_cen, r.loss.l_rank, r.loss.total, r.lr, r.stage, r.epoch
        )?;
    }
    Ok(())
}

pub fn read_log_csv<R: BufRead>(r: R) -> Result<Vec<LogRow>> {
    let mut rows = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line.trim() != LOG_HEADER {
                return Err(Error::Format(format!("unexpected log header `{line}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Format(format!("log line {}: expected 8 fields", n + 1)));
        }
        let bad = |what: &str| Error::Format(format!("log line {}: bad {what}", n + 1));
        let num = |i: usize, what: &str| f[i].parse::<f64>().map_err(|_| bad(what));
        rows.push(LogRow {
            step: f[0].parse().map_err(|_| bad("step"))?,
            loss: LossBreakdown {
                l_cls: num(1, "l_cls")?,
                l_cen: num(2, "l_cen")?,
                l_rank: num(3, "l_rank")?,
                total: num(4, "total")?,
            },
            lr: num(5, "lr")?,
            stage: f[6].to_string(),
            epoch: f[7].parse().map_err(|_| bad("epoch"))?,
        });
    }
    Ok(rows)
}
