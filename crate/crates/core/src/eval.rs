//! Average precision, per-task MAP and the sixteen-task report.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::media::Media;
use crate::retrieval::{EmbeddingStore, Index, RetrievalTask, Scope};

/// Published MAP figures for the full model on the fine-grained bird
/// benchmark, bi-modality columns in [`RetrievalTask::bi_modality`] order.
pub const REFERENCE_BI: [f64; 12] = [
    0.210, 0.526, 0.606, 0.255, 0.181, 0.208, 0.553, 0.159, 0.443, 0.629, 0.195, 0.437,
];
pub const REFERENCE_BI_AVERAGE: f64 = 0.366;
/// Multi-modality columns in [`RetrievalTask::multi_modality`] order.
pub const REFERENCE_MULTI: [f64; 4] = [0.549, 0.196, 0.416, 0.485];
pub const REFERENCE_MULTI_AVERAGE: f64 = 0.412;
/// Published bi-modality averages for cls, cls+cen and cls+cen+rank.
pub const REFERENCE_ABLATION: [f64; 3] = [0.316, 0.359, 0.366];

/// `(1/R) Σ_k (R_k / k) r_k` over the whole ranked list.
///
/// `relevant_total` is the number of relevant candidates; it may exceed the
/// flagged count only if the list was produced from a larger pool.
pub fn average_precision(flags: &[bool], relevant_total: usize) -> Result<f64> {
    let flagged = flags.iter().filter(|&&f| f).count();
    if flagged > relevant_total {
        return Err(Error::Relevance(format!(
            "{flagged} relevant items flagged but R = {relevant_total}"
        )));
    }
    if relevant_total == 0 {
        log::warn!("query has no relevant candidates; AP defined as 0");
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &f) in flags.iter().enumerate() {
        if f {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / relevant_total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryAp {
    pub id: String,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskResult {
    pub task: String,
    pub map: f64,
    pub queries: Vec<QueryAp>,
}

/// Every record of the query media is a query; relevance is label equality.
pub fn map_for_task(index: &Index, task: RetrievalTask) -> Result<TaskResult> {
    let queries: Vec<_> = index.records().iter().filter(|r| r.media == task.query).collect();
    if queries.is_empty() {
        return Err(Error::EmptyQuerySet(task.code()));
    }
    let records = index.records();
    let aps = queries
        .par_iter()
        .map(|q| {
            let ranked = index.rank(&q.vector, task.scope, Some(&q.id))?;
            let flags: Vec<bool> = ranked.iter().map(|(i, _)| records[*i].label == q.label).collect();
            let r = flags.iter().filter(|&&f| f).count();
            Ok(QueryAp {
                id: q.id.clone(),
                ap: average_precision(&flags, r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let map = aps.iter().map(|a| a.ap).sum::<f64>() / aps.len() as f64;
    Ok(TaskResult {
        task: task.code(),
        map,
        queries: aps,
    })
}

/// MAP for all sixteen tasks. A task whose query or candidate media is
/// missing is left as a gap, and the corresponding average is `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub bi: Vec<(RetrievalTaskLabel, Option<TaskResult>)>,
    pub multi: Vec<(RetrievalTaskLabel, Option<TaskResult>)>,
    pub bi_average: Option<f64>,
    pub multi_average: Option<f64>,
}

/// Column heading plus short code of a task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalTaskLabel {
    pub code: String,
    pub heading: String,
}

fn mean(values: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = values.iter().copied().collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn evaluate(index: &Index, tasks: Vec<RetrievalTask>, present: &[bool; 4]) -> Result<Vec<(RetrievalTaskLabel, Option<TaskResult>)>> {
    tasks
        .into_iter()
        .map(|t| {
            let label = RetrievalTaskLabel {
                code: t.code(),
                heading: t.to_string(),
            };
            let target_ok = match t.scope {
                Scope::Media(m) => present[m.index()],
                Scope::All => true,
            };
            if !present[t.query.index()] || !target_ok {
                log::warn!("task {} has no {} records; reported as a gap", t.code(), if present[t.query.index()] { "candidate" } else { "query" });
                return Ok((label, None));
            }
            Ok((label, Some(map_for_task(index, t)?)))
        })
        .collect()
}

pub fn full_report(store: &EmbeddingStore) -> Result<EvalReport> {
    let index = Index::build(store)?;
    let present = Media::ALL.map(|m| store.count(m) > 0);
    let bi = evaluate(&index, RetrievalTask::bi_modality(), &present)?;
    let multi = evaluate(&index, RetrievalTask::multi_modality(), &present)?;
    let maps = |rows: &[(RetrievalTaskLabel, Option<TaskResult>)]| -> Vec<Option<f64>> {
        rows.iter().map(|(_, r)| r.as_ref().map(|r| r.map)).collect()
    };
    Ok(EvalReport {
        bi_average: mean(&maps(&bi)),
        multi_average: mean(&maps(&multi)),
        bi,
        multi,
    })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

impl EvalReport {
    pub fn bi_maps(&self) -> Vec<Option<f64>> {
        self.bi.iter().map(|(_, r)| r.as_ref().map(|r| r.map)).collect()
    }

    pub fn multi_maps(&self) -> Vec<Option<f64>> {
        self.multi.iter().map(|(_, r)| r.as_ref().map(|r| r.map)).collect()
    }

    pub fn map(&self, code: &str) -> Option<f64> {
        self.bi
            .iter()
            .chain(&self.multi)
            .find(|(l, _)| l.code == code)
            .and_then(|(_, r)| r.as_ref().map(|r| r.map))
    }

    /// `task,kind,map` rows followed by the two averages. Empty map field
    /// marks a gap.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,kind,map\n");
        for (kind, rows) in [("bi", &self.bi), ("multi", &self.multi)] {
            for (l, r) in rows {
                let v = r.as_ref().map_or(String::new(), |r| r.map.to_string());
                let _ = writeln!(out, "{},{kind},{v}", l.code);
            }
        }
        let avg = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(out, "average,bi,{}", avg(self.bi_average));
        let _ = writeln!(out, "average,multi,{}", avg(self.multi_average));
        out
    }

    /// `task,query_id,ap` for every evaluated query.
    pub fn per_query_csv(&self) -> String {
        let mut out = String::from("task,query_id,ap\n");
        for (l, r) in self.bi.iter().chain(&self.multi) {
            if let Some(r) = r {
                for q in &r.queries {
                    let _ = writeln!(out, "{},{},{}", l.code, q.id, q.ap);
                }
            }
        }
        out
    }

    /// Two tables in report column order with the published row beneath.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let header = |rows: &[(RetrievalTaskLabel, Option<TaskResult>)]| {
            let mut h = format!("{:<12}", "Method");
            for (l, _) in rows {
                h += &format!("{:>8}", l.heading);
            }
            h + &format!("{:>9}", "Average")
        };
        let line = |name: &str, values: &[Option<f64>], avg: Option<f64>| {
            let mut s = format!("{name:<12}");
            for v in values {
                s += &format!("{:>8}", fmt_opt(*v, 3));
            }
            s + &format!("{:>9}", fmt_opt(avg, 3))
        };
        let _ = writeln!(out, "Bi-modality MAP");
        let _ = writeln!(out, "{}", header(&self.bi));
        let _ = writeln!(out, "{}", line("this run", &self.bi_maps(), self.bi_average));
        let reference: Vec<Option<f64>> = REFERENCE_BI.iter().map(|v| Some(*v)).collect();
        let _ = writeln!(out, "{}", line("published", &reference, Some(REFERENCE_BI_AVERAGE)));
        let _ = writeln!(out);
        let _ = writeln!(out, "Multi-modality MAP");
        let _ = writeln!(out, "{}", header(&self.multi));
        let _ = writeln!(out, "{}", line("this run", &self.multi_maps(), self.multi_average));
        let reference: Vec<Option<f64>> = REFERENCE_MULTI.iter().map(|v| Some(*v)).collect();
        let _ = writeln!(out, "{}", line("published", &reference, Some(REFERENCE_MULTI_AVERAGE)));
        out
    }
}

/// One ablation variant's bi-modality results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub report: EvalReport,
}

/// Comparison of variants in ascending constraint order; flags each
/// consecutive average gain below `min_gap`.
pub fn ablation_table(rows: &[AblationRow], min_gap: f64) -> String {
    let mut out = String::new();
    let Some(first) = rows.first() else {
        return out;
    };
    let mut h = format!("{:<14}", "Variant");
    for (l, _) in &first.report.bi {
        h += &format!("{:>8}", l.heading);
    }
    let _ = writeln!(out, "{h}{:>9}", "Average");
    for (n, r) in rows.iter().enumerate() {
        let mut s = format!("{:<14}", r.variant);
        for v in r.report.bi_maps() {
            s += &format!("{:>8}", fmt_opt(v, 3));
        }
        s += &format!("{:>9}", fmt_opt(r.report.bi_average, 3));
        if n > 0 {
            if let (Some(a), Some(b)) = (rows[n - 1].report.bi_average, r.report.bi_average) {
                if b - a < min_gap {
                    s += &format!("  [gain {:+.4} below {min_gap}]", b - a);
                }
            }
        }
        let _ = writeln!(out, "{s}");
    }
    let mut s = format!("{:<14}", "published");
    for _ in &first.report.bi {
        s += &format!("{:>8}", "");
    }
    let refs: Vec<String> = REFERENCE_ABLATION.iter().map(|v| format!("{v:.3}")).collect();
    let _ = writeln!(out, "{s}{:>9}  (averages: {})", "", refs.join(" / "));
    out
}
