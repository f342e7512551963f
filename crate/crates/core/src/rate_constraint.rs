//! Delay-to-rate conversion: effective bandwidth and capacity estimators,
//! the equivalent average-rate target, and the CSI-only water-filling policy
//! it induces.

use serde::{Deserialize, Serialize};

use crate::alloc::{allocate, LinkBid};
use crate::channel::{ChannelModel, ChannelState};
use crate::error::{Error, Result};
use crate::model::Action;

/// Block lengths (slots) used by [`effective_bandwidth`] by default.
pub const DEFAULT_BLOCKS: [usize; 3] = [1, 8, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosSpec {
    /// Delay bound in seconds.
    pub d_max: f64,
    /// Tolerated violation probability.
    pub epsilon: f64,
    /// QoS exponent.
    pub theta: f64,
    /// Average delay target per link, seconds.
    pub d_target: Vec<f64>,
}

impl QosSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) || !(self.theta > 0.0) || !(self.d_max > 0.0) {
            return Err(Error::Config("QoS spec needs epsilon in (0,1), theta > 0, d_max > 0".into()));
        }
        if self.d_target.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Config("delay targets must be positive".into()));
        }
        Ok(())
    }
}

fn log_mean_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + (s / xs.len() as f64).ln()
}

/// Empirical `(1/(theta t)) ln E[exp(theta A(t))]` from non-overlapping blocks
/// of the arrival trace. Returns the estimate for the longest block length in
/// `blocks` that fits in the trace at least once.
pub fn effective_bandwidth(trace: &[f64], theta: f64, blocks: &[usize]) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::Contract("empty arrival trace".into()));
    }
    if !(theta > 0.0) {
        return Err(Error::Contract(format!("theta must be positive, got {theta}")));
    }
    let t = blocks
        .iter()
        .copied()
        .filter(|&b| b >= 1 && b <= trace.len())
        .max()
        .ok_or_else(|| Error::Contract("no block length fits the trace".into()))?;
    let sums: Vec<f64> = trace.chunks_exact(t).map(|c| c.iter().sum()).collect();
    let peak = sums.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    if !(theta * peak).is_finite() || theta * peak > 1e300 {
        return Err(Error::Overflow(format!(
            "theta * A = {:e} is not representable; rescale arrivals or theta",
            theta * peak
        )));
    }
    Ok(log_mean_exp(sums.iter().map(|a| theta * a)) / (theta * t as f64))
}

/// `-(1/theta) ln E[exp(-theta R)]` for an uncorrelated service process given
/// as `(probability, rate)` pairs.
pub fn effective_capacity(rate_dist: &[(f64, f64)], theta: f64) -> Result<f64> {
    if !(theta > 0.0) {
        return Err(Error::Contract(format!("theta must be positive, got {theta}")));
    }
    let total: f64 = rate_dist.iter().map(|(p, _)| p).sum();
    if rate_dist.is_empty() || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("rate distribution mass {total}")));
    }
    let terms: Vec<(f64, f64)> = rate_dist.iter().filter(|(p, _)| *p > 0.0).map(|&(p, r)| (p.ln(), -theta * r)).collect();
    let max = terms.iter().map(|(lp, x)| lp + x).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|(lp, x)| (lp + x - max).exp()).sum();
    Ok(-(max + s.ln()) / theta)
}

/// Average service rate (bits/s) that meets an average delay target `d`
/// (seconds) for Poisson arrivals of `lambda` packets/s with mean size
/// `n_bar` bits.
pub fn rate_target(d: f64, lambda: f64, n_bar: f64) -> Result<f64> {
    if !(d > 0.0 && lambda > 0.0 && n_bar > 0.0) {
        return Err(Error::Contract("rate_target needs positive delay, rate and size".into()));
    }
    let a = 2.0 * d * lambda + 2.0;
    let disc = a * a - 8.0 * d * lambda;
    Ok((a + disc.sqrt()) / (4.0 * d) * n_bar)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePolicyParams {
    /// Rate-constraint multipliers.
    pub nu: Vec<f64>,
    /// Power multipliers.
    pub gamma: Vec<f64>,
    /// Per-link rate targets in the evaluator's rate units.
    pub rate_target: Vec<f64>,
}

impl RatePolicyParams {
    pub fn new(nu: Vec<f64>, gamma: Vec<f64>, rate_target: Vec<f64>) -> Result<Self> {
        let p = Self { nu, gamma, rate_target };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu.len() != self.gamma.len() || self.nu.len() != self.rate_target.len() {
            return Err(Error::Dimension("nu, gamma and rate_target must have equal length".into()));
        }
        if self.nu.iter().chain(&self.gamma).any(|v| !(*v >= 0.0)) {
            return Err(Error::Contract("multipliers must be nonnegative".into()));
        }
        Ok(())
    }

    fn bids(&self) -> Vec<LinkBid> {
        self.nu.iter().zip(&self.gamma).map(|(nu, g)| LinkBid::new(1.0 + nu, *g)).collect()
    }
}

/// Water level `(1 + nu_l)/gamma_l`; queue lengths are never consulted.
pub fn allocate_rate_constraint(
    h: &ChannelState,
    model: &ChannelModel,
    params: &RatePolicyParams,
    peak: f64,
) -> Result<Action> {
    allocate(h, model, &params.bids(), peak)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub kappa0: f64,
    pub max_epochs: usize,
    /// Relative residual accepted on a binding constraint.
    pub tolerance: f64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self { kappa0: 1.0, max_epochs: 5000, tolerance: 0.02 }
    }
}

/// Epoch-by-epoch multiplier values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneTrace {
    pub gamma: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
}

/// Minimum multiplier kept by the projection so water levels stay finite.
pub const GAMMA_FLOOR: f64 = 1e-9;

/// Projected subgradient on relative residuals with step `kappa0 / k`.
///
/// `eval` maps parameters to measured per-link `(power, rate)`; the harness
/// supplies a simulation epoch on a frozen random stream. A constraint counts
/// as met when it is within `tolerance` of its target or slack with a zero
/// multiplier.
pub fn tune_multipliers<F>(
    mut params: RatePolicyParams,
    power_budget: &[f64],
    opts: &TuneOptions,
    mut eval: F,
) -> Result<(RatePolicyParams, TuneTrace)>
where
    F: FnMut(&RatePolicyParams) -> Result<(Vec<f64>, Vec<f64>)>,
{
    params.validate()?;
    let n = params.nu.len();
    if power_budget.len() != n {
        return Err(Error::Dimension(format!("{} budgets for {n} links", power_budget.len())));
    }
    if power_budget.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::Contract("power budgets must be positive".into()));
    }
    for g in params.gamma.iter_mut() {
        *g = g.max(GAMMA_FLOOR);
    }
    let mut trace = TuneTrace { gamma: Vec::new(), nu: Vec::new() };
    let mut last = (f64::NAN, f64::NAN);
    for k in 1..=opts.max_epochs {
        trace.gamma.push(params.gamma.clone());
        trace.nu.push(params.nu.clone());
        let (power, rate) = eval(&params)?;
        let mut worst_p: f64 = 0.0;
        let mut worst_r: f64 = 0.0;
        let mut done = true;
        let kappa = opts.kappa0 / k as f64;
        for l in 0..n {
            let rp = (power[l] - power_budget[l]) / power_budget[l];
            let target = params.rate_target[l];
            let rr = if target > 0.0 { (target - rate[l]) / target } else { -1.0 };
            let p_ok = rp.abs() <= opts.tolerance || (rp < 0.0 && params.gamma[l] <= GAMMA_FLOOR);
            let r_ok = rr.abs() <= opts.tolerance || (rr < 0.0 && params.nu[l] == 0.0);
            done &= p_ok && r_ok;
            worst_p = worst_p.max(rp);
            worst_r = worst_r.max(rr);
            params.gamma[l] = (params.gamma[l] + kappa * rp).max(GAMMA_FLOOR);
            params.nu[l] = (params.nu[l] + kappa * rr).max(0.0);
        }
        last = (worst_p, worst_r);
        if done {
            // Undo the final step: the measured point is the converged one.
            params.gamma = trace.gamma.last().cloned().unwrap_or_default();
            params.nu = trace.nu.last().cloned().unwrap_or_default();
            return Ok((params, trace));
        }
    }
    Err(Error::Infeasible(format!(
        "multipliers did not settle in {} epochs; relative residuals power {:.4}, rate {:.4}",
        opts.max_epochs, last.0, last.1
    )))
}
