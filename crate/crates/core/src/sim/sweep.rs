//! Cross-product sweeps over one numeric scenario field and a seed list.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::engine::{run, RunResult};
use super::scenario::Scenario;
use crate::error::{Error, Result};

/// Returns a copy of `s` with the dotted field `axis` set to `value`.
/// Integer fields accept only whole nonnegative values.
pub fn set_axis(s: &Scenario, axis: &str, value: f64) -> Result<Scenario> {
    let mut root = serde_json::to_value(s)?;
    let mut slot = &mut root;
    for key in axis.split('.') {
        slot = slot.get_mut(key).ok_or_else(|| Error::UnknownAxis(axis.to_string()))?;
    }
    *slot = match slot {
        Value::Number(n) if n.is_u64() => {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!("axis {axis} is an integer field; got {value}")));
            }
            Value::from(value as u64)
        }
        Value::Number(_) => serde_json::Number::from_f64(value).map(Value::Number).ok_or_else(|| Error::Config(format!("axis value {value} is not finite")))?,
        _ => return Err(Error::UnknownAxis(axis.to_string())),
    };
    let out: Scenario = serde_json::from_value(root)?;
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub value_index: usize,
    pub value: f64,
    pub seed: u64,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub result: RunResult,
}

/// One job per (value, seed), in value-major order.
pub fn plan(template: &Scenario, axis: &str, values: &[f64], seeds: &[u64]) -> Result<Vec<Job>> {
    let mut jobs = Vec::with_capacity(values.len() * seeds.len());
    for (i, &v) in values.iter().enumerate() {
        let s = set_axis(template, axis, v)?;
        for &seed in seeds {
            jobs.push(Job { value_index: i, value: v, seed, scenario: Scenario { seed, ..s.clone() } });
        }
    }
    Ok(jobs)
}

/// Runs every job, in parallel or in the given execution order, and
/// assembles the rows sorted by (value index, seed).
pub fn execute(axis: &str, jobs: &[Job], order: Option<&[usize]>) -> Result<Vec<SweepRow>> {
    let mut done: Vec<(usize, u64, SweepRow)> = match order {
        None => jobs.par_iter().map(|j| finish(axis, j)).collect::<Result<_>>()?,
        Some(ord) => {
            let mut seen = vec![false; jobs.len()];
            if ord.len() != jobs.len() || ord.iter().any(|&i| i >= jobs.len() || std::mem::replace(&mut seen[i], true)) {
                return Err(Error::Contract("execution order must be a permutation of the jobs".into()));
            }
            ord.iter().map(|&i| finish(axis, &jobs[i])).collect::<Result<_>>()?
        }
    };
    done.sort_by_key(|d| (d.0, d.1));
    Ok(done.into_iter().map(|d| d.2).collect())
}

fn finish(axis: &str, j: &Job) -> Result<(usize, u64, SweepRow)> {
    let result = run(&j.scenario)?;
    Ok((j.value_index, j.seed, SweepRow { axis: axis.to_string(), value: j.value, result }))
}

pub fn sweep(template: &Scenario, axis: &str, values: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    execute(axis, &plan(template, axis, values, seeds)?, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template() -> Scenario {
        Scenario::from_toml(
            r#"
schema_version = 1
horizon = 3000
warmup = 300
[single_hop]
links = 2
subbands = 2
tau = 1e-3
subband_bandwidth_hz = 10000.0
buffer = 5.0
avg_snr_db = 10.0
[single_hop.traffic]
mode = "poisson_packet"
rate_pps = 20.0
mean_size_bits = 500.0
[single_hop.channel]
kind = "rayleigh"
levels = 3
persistence = 0.5
[single_hop.policy]
kind = "mlwdf"
gamma = 1.0
"#,
        )
        .unwrap()
    }

    #[test]
    fn set_axis_float_and_integer_fields() {
        let s = set_axis(&template(), "single_hop.avg_snr_db", 17.75).unwrap();
        assert_eq!(s.single_hop.as_ref().unwrap().avg_snr_db, 17.75);
        let s = set_axis(&template(), "single_hop.links", 4.0).unwrap();
        assert_eq!(s.single_hop.as_ref().unwrap().links, 4);
        let s = set_axis(&template(), "single_hop.policy.gamma", 0.25).unwrap();
        assert_eq!(s.policy_name(), "mlwdf");
        assert!(set_axis(&template(), "single_hop.links", 2.5).is_err());
    }

    #[test]
    fn unknown_axis_is_rejected() {
        assert!(matches!(set_axis(&template(), "single_hop.colour", 1.0), Err(Error::UnknownAxis(_))));
        assert!(matches!(set_axis(&template(), "single_hop.policy.kind", 1.0), Err(Error::UnknownAxis(_))));
    }

    #[test]
    fn single_point_equals_run() {
        let rows = sweep(&template(), "single_hop.avg_snr_db", &[10.0], &[3]).unwrap();
        assert_eq!(rows.len(), 1);
        let direct = run(&Scenario { seed: 3, ..template() }).unwrap();
        assert_eq!(rows[0].result.metrics, direct.metrics);
    }

    #[test]
    fn cardinality_and_order() {
        let rows = sweep(&template(), "single_hop.avg_snr_db", &[4.0, 6.0, 8.0, 10.0, 12.0], &[1, 2]).unwrap();
        assert_eq!(rows.len(), 10);
        assert!(rows.windows(2).all(|w| (w[0].value, w[0].result.seed) < (w[1].value, w[1].result.seed)));
    }
}
