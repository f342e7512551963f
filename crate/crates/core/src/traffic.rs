//! Exogenous arrival sources and the birth-death departure approximation.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TrafficModel {
    /// On-off bits: `max_bits` with probability `mean_bits / max_bits`, else 0.
    Bit { mean_bits: f64, max_bits: f64 },
    /// Poisson packets thinned to at most one per slot, exponential sizes.
    PoissonPacket {
        rate_pps: f64,
        mean_size_bits: f64,
        tau: f64,
    },
}

impl TrafficModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TrafficModel::Bit { mean_bits, max_bits } => {
                if !(mean_bits >= 0.0) || !(max_bits > 0.0) || mean_bits > max_bits {
                    return Err(Error::Config(format!(
                        "bit traffic needs 0 <= mean ({mean_bits}) <= max ({max_bits})"
                    )));
                }
            }
            TrafficModel::PoissonPacket { rate_pps, mean_size_bits, tau } => {
                if !(rate_pps >= 0.0) || !(mean_size_bits > 0.0) || !(tau > 0.0) {
                    return Err(Error::Config("packet traffic needs rate >= 0, size > 0, tau > 0".into()));
                }
                if rate_pps * tau >= 1.0 {
                    return Err(Error::Config(format!(
                        "per-slot arrival probability {} must be below 1",
                        rate_pps * tau
                    )));
                }
            }
        }
        Ok(())
    }

    /// Probability of a nonzero arrival in one slot.
    pub fn arrival_prob(&self) -> f64 {
        match *self {
            TrafficModel::Bit { mean_bits, max_bits } => mean_bits / max_bits,
            TrafficModel::PoissonPacket { rate_pps, tau, .. } => rate_pps * tau,
        }
    }

    /// Largest possible per-slot arrival, if bounded.
    pub fn max_arrival(&self) -> Option<f64> {
        match *self {
            TrafficModel::Bit { max_bits, .. } => Some(max_bits),
            TrafficModel::PoissonPacket { .. } => Some(1.0),
        }
    }

    pub fn is_packet(&self) -> bool {
        matches!(self, TrafficModel::PoissonPacket { .. })
    }

    /// One slot of arrivals for one queue. Bit mode returns bits; packet mode
    /// returns the size in bits of the arriving packet, or `None`.
    pub fn sample<R: Rng + ?Sized, S: Rng + ?Sized>(&self, arrivals: &mut R, sizes: &mut S) -> Option<f64> {
        let hit = arrivals.gen::<f64>() < self.arrival_prob();
        match *self {
            TrafficModel::Bit { max_bits, .. } => hit.then_some(max_bits),
            TrafficModel::PoissonPacket { mean_size_bits, .. } => {
                // Sizes are drawn every slot so the size stream stays aligned
                // across policies that see the same arrivals.
                let size = Exp::new(1.0 / mean_size_bits).expect("validated").sample(sizes);
                hit.then_some(size)
            }
        }
    }
}

/// Per-queue arrivals for one slot.
pub fn sample_arrivals<R: Rng + ?Sized, S: Rng + ?Sized>(
    t: &TrafficModel,
    queues: usize,
    arrivals: &mut R,
    sizes: &mut S,
) -> Result<Vec<Option<f64>>> {
    t.validate()?;
    Ok((0..queues).map(|_| t.sample(arrivals, sizes)).collect())
}

/// Per-slot departure probability for conditional service rate `mu_bar`
/// (packets/s). The first-order form `mu_bar * tau` is the default.
pub fn departure_prob(mu_bar: f64, tau: f64, exact: bool) -> Result<f64> {
    let x = mu_bar * tau;
    if !(x >= 0.0) {
        return Err(Error::Contract(format!("negative service rate product {x}")));
    }
    if x >= 1.0 {
        return Err(Error::Contract(format!("mu_bar * tau = {x} must be below 1")));
    }
    Ok(if exact { -(-x).exp_m1() } else { x })
}
