//! CSV and JSON result tables with a fixed column order.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::engine::{LearningRow, RunResult};
use super::sweep::SweepRow;
use crate::error::Result;

/// One output row. `q_bar` joins the per-queue averages with `;`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub scenario_hash: String,
    pub seed: u64,
    pub policy: String,
    pub axis: String,
    pub axis_value: f64,
    pub q_bar: String,
    pub d_bar: f64,
    pub p_bar: f64,
    pub t_bar: f64,
    pub delay_littles: Option<f64>,
    pub delay_timestamped: Option<f64>,
    pub slots: u64,
    /// Zero unless timing output was requested, so tables stay reproducible.
    pub wall_ms: u64,
}

impl Record {
    pub fn new(r: &RunResult, axis: &str, value: f64, timing: bool) -> Self {
        let m = &r.metrics;
        Self {
            scenario_hash: r.scenario_hash.clone(),
            seed: r.seed,
            policy: r.policy.clone(),
            axis: axis.to_string(),
            axis_value: value,
            q_bar: m.q_bar.iter().map(|q| format!("{q}")).collect::<Vec<_>>().join(";"),
            d_bar: m.d_bar,
            p_bar: m.p_bar_mean,
            t_bar: m.t_bar_total,
            delay_littles: m.delay_littles,
            delay_timestamped: m.delay_timestamped,
            slots: m.slots,
            wall_ms: if timing { r.wall_ms } else { 0 },
        }
    }
}

pub fn records(rows: &[SweepRow], timing: bool) -> Vec<Record> {
    rows.iter().map(|r| Record::new(&r.result, &r.axis, r.value, timing)).collect()
}

pub fn write_csv<W: Write>(out: W, recs: &[Record]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in recs {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(out: W, recs: &[Record]) -> Result<()> {
    serde_json::to_writer_pretty(out, recs)?;
    Ok(())
}

pub fn csv_string(recs: &[Record]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, recs)?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

/// Learning trace as `slot,norm,q1,...,qN`.
pub fn write_learning_csv<W: Write>(out: W, rows: &[LearningRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let width = rows.first().map_or(0, |r| r.entries.len());
    let mut header = vec!["slot".to_string(), "norm".to_string()];
    header.extend((1..=width).map(|q| format!("q{q}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.slot.to_string(), r.norm.to_string()];
        rec.extend(r.entries.iter().map(|e| e.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
