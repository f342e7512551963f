//! Multiplier tuning against average power and drop targets.
//!
//! Every evaluation reruns the scenario with its own seed, so the measured
//! curves are deterministic functions of the multiplier and bisection
//! applies directly.

use serde::{Deserialize, Serialize};

use super::engine::run;
use super::scenario::{PolicySpec, Scenario};
use crate::error::{Error, Result};
use crate::model::MetricsReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    /// Per-link average power budget, linear units.
    pub power: Option<f64>,
    /// Drop-rate ceiling.
    pub drop: Option<f64>,
    /// Relative tolerance on power.
    pub power_tol: f64,
    /// Absolute tolerance on the drop rate.
    pub drop_tol: f64,
}

impl Default for Targets {
    fn default() -> Self {
        Self { power: None, drop: None, power_tol: 0.02, drop_tol: 0.002 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneStep {
    pub knob: String,
    pub value: f64,
    pub power: f64,
    pub drop: f64,
}

/// Multiplier trajectory of one tuning call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TuneRecord {
    pub steps: Vec<TuneStep>,
}

const MAX_BRACKET: usize = 40;
const MAX_BISECT: usize = 40;

fn knob_mut<'a>(p: &'a mut PolicySpec, name: &str) -> Option<&'a mut f64> {
    match (p, name) {
        (PolicySpec::RateConstraint { gamma, .. }, "gamma")
        | (PolicySpec::Mlwdf { gamma }, "gamma")
        | (PolicySpec::ApproxMdp { gamma, .. }, "gamma")
        | (PolicySpec::LearnedPotential { gamma, .. }, "gamma") => Some(gamma),
        (PolicySpec::Eeca { v }, "v") => Some(v),
        (PolicySpec::Fixed { power }, "power") => Some(power),
        (PolicySpec::ApproxMdp { eta, .. }, "eta") | (PolicySpec::LearnedPotential { eta, .. }, "eta") => Some(eta),
        _ => None,
    }
}

/// Knob steering average power and whether power grows with it.
fn power_knob(p: &PolicySpec) -> (&'static str, bool) {
    match p {
        PolicySpec::Eeca { .. } => ("v", false),
        PolicySpec::Fixed { .. } => ("power", true),
        _ => ("gamma", false),
    }
}

/// Smallest admissible knob value.
fn knob_floor(p: &PolicySpec, name: &str) -> f64 {
    match (p, name) {
        (PolicySpec::RateConstraint { .. } | PolicySpec::Mlwdf { .. } | PolicySpec::Fixed { .. }, _) => 0.0,
        (_, "eta") => 0.0,
        _ => 1e-9,
    }
}

fn with_knob(s: &Scenario, name: &str, value: f64) -> Scenario {
    let mut s = s.clone();
    let h = s.single_hop.as_mut().expect("single-hop scenario");
    *knob_mut(&mut h.policy, name).expect("knob exists") = value;
    s
}

fn knob_of(s: &Scenario, name: &str) -> f64 {
    let mut p = s.single_hop.as_ref().expect("single-hop scenario").policy.clone();
    *knob_mut(&mut p, name).expect("knob exists")
}

fn measure(s: &Scenario, knob: &str, rec: &mut TuneRecord) -> Result<MetricsReport> {
    let m = run(s)?.metrics;
    rec.steps.push(TuneStep { knob: knob.to_string(), value: knob_of(s, knob), power: m.p_bar_mean, drop: m.d_bar });
    Ok(m)
}

/// Solves `y(knob) = target` for a monotone `y` by geometric bracketing and
/// bisection. Returns the scenario at the solution; a slack constraint at
/// the knob floor leaves the knob there.
fn solve(
    s: &Scenario,
    knob: &str,
    increasing: bool,
    target: f64,
    ok: impl Fn(f64) -> bool,
    y: impl Fn(&MetricsReport) -> f64,
    inner: &mut dyn FnMut(Scenario, &mut TuneRecord) -> Result<(Scenario, MetricsReport)>,
    rec: &mut TuneRecord,
) -> Result<(Scenario, MetricsReport)> {
    let policy = s.single_hop.as_ref().ok_or_else(|| Error::Mismatch("tuning needs a single-hop scenario".into()))?.policy.clone();
    let floor = knob_floor(&policy, knob);
    let (mut cur, mut m) = inner(s.clone(), rec)?;
    let k0 = knob_of(&cur, knob);
    let v0 = y(&m);
    if ok(v0) {
        return Ok((cur, m));
    }
    // Move the knob up when the measured value must fall and falls with it,
    // or must rise and rises with it.
    let up = (v0 > target) != increasing;
    if !up && k0 <= floor {
        return if increasing {
            Err(Error::Infeasible(format!("{knob} at its floor {floor} still gives {v0:.4e} above {target:.4e}")))
        } else {
            Ok((cur, m))
        };
    }
    let mut lo = (k0.max(floor), v0);
    let mut k = if k0 > 0.0 { k0 } else { 1e-3 };
    let mut hi = None;
    for _ in 0..MAX_BRACKET {
        k = if up { k * 4.0 } else { k / 4.0 };
        if !up && k < floor.max(1e-12) {
            {
                let (c, mm) = inner(with_knob(&cur, knob, floor), rec)?;
                if ok(y(&mm)) || (y(&mm) < target) != increasing {
                    return Ok((c, mm));
                }
            }
            return Err(Error::Infeasible(format!("{knob} could not bring the measure to {target:.4e}")));
        }
        let (c, mm) = inner(with_knob(&cur, knob, k), rec)?;
        let v = y(&mm);
        if ok(v) {
            return Ok((c, mm));
        }
        if (v > target) == (v0 > target) {
            lo = (k, v);
            cur = c;
            m = mm;
        } else {
            hi = Some((k, c, mm));
            break;
        }
    }
    let Some(mut hi) = hi else {
        return Err(Error::Infeasible(format!("{knob} bracketing failed: last value {:.4e} vs target {target:.4e}", m.p_bar_mean)));
    };
    let mut best = (cur.clone(), m.clone(), (lo.1 - target).abs());
    if (y(&hi.2) - target).abs() < best.2 {
        best = (hi.1.clone(), hi.2.clone(), (y(&hi.2) - target).abs());
    }
    for _ in 0..MAX_BISECT {
        let mid = if lo.0 > 0.0 { (lo.0 * hi.0).sqrt() } else { hi.0 / 2.0 };
        let (c, mm) = inner(with_knob(&cur, knob, mid), rec)?;
        let v = y(&mm);
        if ok(v) {
            return Ok((c, mm));
        }
        if (v - target).abs() < best.2 {
            best = (c.clone(), mm.clone(), (v - target).abs());
        }
        if (v > target) == (v0 > target) {
            lo = (mid, v);
            cur = c;
        } else {
            hi = (mid, c, mm);
        }
        if (hi.0 / lo.0.max(1e-300) - 1.0).abs() < 1e-9 {
            break;
        }
    }
    Err(Error::Infeasible(format!(
        "{knob} bisection stalled {:.4e} away from {target:.4e} at {}",
        best.2,
        knob_of(&best.0, knob)
    )))
}

/// Tunes the policy's power knob to the power budget and, for MDP policies,
/// raises the drop weight until the drop rate is within tolerance of the
/// ceiling. Constraints already met leave their
/// multipliers unchanged.
pub fn adapt_multipliers(s: &Scenario, targets: &Targets) -> Result<(Scenario, TuneRecord)> {
    s.validate()?;
    let h = s.single_hop.as_ref().ok_or_else(|| Error::Mismatch("multiplier tuning applies to single-hop scenarios".into()))?;
    let (pknob, inc) = power_knob(&h.policy);
    let drop_knob = match (&h.policy, targets.drop) {
        (_, None) => None,
        (PolicySpec::ApproxMdp { .. } | PolicySpec::LearnedPotential { .. }, Some(_)) => Some("eta"),
        (p, Some(_)) => return Err(Error::Mismatch(format!("{} has no drop multiplier", p.name()))),
    };
    let mut rec = TuneRecord::default();
    let power = targets.power;
    let ptol = targets.power_tol;
    let mut power_stage = |sc: Scenario, rec: &mut TuneRecord| -> Result<(Scenario, MetricsReport)> {
        match power {
            None => {
                let m = measure(&sc, pknob, rec)?;
                Ok((sc, m))
            }
            Some(b) => solve(
                &sc,
                pknob,
                inc,
                b,
                |p| ((p - b) / b).abs() <= ptol,
                |m| m.p_bar_mean,
                &mut |c, r| {
                    let m = measure(&c, pknob, r)?;
                    Ok((c, m))
                },
                rec,
            ),
        }
    };
    let (tuned, _) = match (drop_knob, targets.drop) {
        (Some(dk), Some(d)) => {
            let dtol = targets.drop_tol;
            solve(s, dk, false, d, |x| x <= d + dtol, |m| m.d_bar, &mut power_stage, &mut rec)?
        }
        _ => power_stage(s.clone(), &mut rec)?,
    };
    Ok((tuned, rec))
}
