//! Per-subcarrier water-filling bids with winner-take-all assignment.
//!
//! Every single-hop policy here reduces to the same rule: link `l` bids on
//! subcarrier `m` with a weight `w_l` on its rate and a price `c_l` on its
//! power, giving water level `w_l / c_l`, power `(w_l / c_l - 1/|H|^2)^+` and
//! bid `X = w_l ln(1 + |H|^2 p) - c_l p`. The largest positive bid wins.
//!
//! Bids are in nats so that the water-filling power is the exact maximizer of
//! `X`; callers whose weights price log2 service fold in the `1/ln 2`.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelModel, ChannelState};
use crate::error::{Error, Result};
use crate::model::Action;

/// Prices below this are treated as this value so water levels stay finite.
pub const PRICE_FLOOR: f64 = 1e-12;

/// Spectral efficiency `log2(1 + g p)` in bits/s/Hz.
pub fn spectral_efficiency(power: f64, gain: f64) -> f64 {
    (gain * power).ln_1p() / std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBid {
    pub weight: f64,
    pub price: f64,
}

impl LinkBid {
    pub fn new(weight: f64, price: f64) -> Self {
        Self { weight, price }
    }

    pub fn water_level(&self) -> f64 {
        if self.weight <= 0.0 {
            0.0
        } else {
            self.weight / self.price.max(PRICE_FLOOR)
        }
    }

    /// Power and bid value on a subcarrier with gain power `gain`, with power
    /// capped at `peak`.
    pub fn evaluate(&self, gain: f64, peak: f64) -> (f64, f64) {
        if self.weight <= 0.0 || gain <= 0.0 {
            return (0.0, 0.0);
        }
        let p = (self.water_level() - 1.0 / gain).max(0.0).min(peak);
        if p <= 0.0 {
            return (0.0, 0.0);
        }
        let x = self.weight * (gain * p).ln_1p() - self.price * p;
        (p, x)
    }
}

/// Assigns each subcarrier to the link with the largest positive bid (ties to
/// the lowest index) at that link's water-filling power. Subcarriers where no
/// bid is positive stay idle.
pub fn allocate(csi: &ChannelState, model: &ChannelModel, bids: &[LinkBid], peak: f64) -> Result<Action> {
    if bids.len() != csi.links() {
        return Err(Error::Dimension(format!("{} bids for {} links", bids.len(), csi.links())));
    }
    if !(peak > 0.0) {
        return Err(Error::Contract(format!("peak power {peak} must be positive")));
    }
    let mut action = Action::idle(csi.links(), csi.subcarriers());
    for m in 0..csi.subcarriers() {
        let mut best: Option<(usize, f64, f64)> = None;
        for (l, bid) in bids.iter().enumerate() {
            let (p, x) = bid.evaluate(csi.gain(model, l, m), peak);
            if x > 0.0 && best.map_or(true, |(_, _, bx)| x > bx) {
                best = Some((l, p, x));
            }
        }
        if let Some((l, p, _)) = best {
            action.assign(m, l, p)?;
        }
    }
    Ok(action)
}

/// Per-link service in bits per slot: `tau * B * sum_m log2(1 + g p)`.
pub fn link_bits(action: &Action, csi: &ChannelState, model: &ChannelModel, bits_per_unit: f64) -> Vec<f64> {
    (0..action.links())
        .map(|l| {
            let se: f64 = (0..action.subcarriers())
                .filter(|&m| action.s(l, m))
                .map(|m| spectral_efficiency(action.p(l, m), csi.gain(model, l, m)))
                .sum();
            se * bits_per_unit
        })
        .collect()
}
