//! System state, queues, actions, per-stage cost and metric accounting shared
//! by every policy and by both simulation engines.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelState;
use crate::error::{Error, Result};

/// Unit of queue contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueUnit {
    /// Real-valued bit backlog.
    Fluid,
    /// Integer packet counts.
    Packet,
}

/// Service order inside a queue. Only affects which packet departs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discipline {
    #[default]
    Fifo,
    Lifo,
}

/// Backlogs of every (node, commodity) queue, flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub lengths: Vec<f64>,
    pub cap: f64,
    pub discipline: Discipline,
    /// Destination queues: they absorb arrivals and stay at zero.
    sinks: Vec<bool>,
}

impl QueueState {
    pub fn new(n: usize, cap: f64) -> Result<Self> {
        if !(cap > 0.0) {
            return Err(Error::Contract(format!("buffer cap must be positive, got {cap}")));
        }
        Ok(Self {
            lengths: vec![0.0; n],
            cap,
            discipline: Discipline::Fifo,
            sinks: vec![false; n],
        })
    }

    pub fn from_lengths(lengths: Vec<f64>, cap: f64) -> Result<Self> {
        let mut q = Self::new(lengths.len(), cap)?;
        for (i, &v) in lengths.iter().enumerate() {
            if !(0.0..=cap).contains(&v) {
                return Err(Error::Contract(format!("queue {i} length {v} outside [0, {cap}]")));
            }
        }
        q.lengths = lengths;
        Ok(q)
    }

    pub fn with_discipline(mut self, discipline: Discipline) -> Self {
        self.discipline = discipline;
        self
    }

    /// Marks destination queues. Their contents are zeroed.
    pub fn with_sinks(mut self, sinks: Vec<bool>) -> Result<Self> {
        if sinks.len() != self.lengths.len() {
            return Err(Error::Dimension(format!(
                "{} sink flags for {} queues",
                sinks.len(),
                self.lengths.len()
            )));
        }
        for (len, &sink) in self.lengths.iter_mut().zip(&sinks) {
            if sink {
                *len = 0.0;
            }
        }
        self.sinks = sinks;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn is_sink(&self, i: usize) -> bool {
        self.sinks[i]
    }

    pub fn is_full(&self, i: usize) -> bool {
        self.lengths[i] >= self.cap
    }

    pub fn total(&self) -> f64 {
        self.lengths.iter().sum()
    }

    /// One slot of the clipped queue recursion
    /// `next = min(cap, max(q - served, 0) + arrivals)`.
    ///
    /// Returns the next state and the per-queue overflow that was dropped.
    pub fn step(&self, served: &[f64], arrivals: &[f64]) -> Result<(QueueState, Vec<f64>)> {
        let n = self.len();
        if served.len() != n || arrivals.len() != n {
            return Err(Error::Dimension(format!(
                "queue_step over {n} queues got {} service and {} arrival entries",
                served.len(),
                arrivals.len()
            )));
        }
        let mut next = self.clone();
        let mut dropped = vec![0.0; n];
        for i in 0..n {
            let (s, a) = (served[i], arrivals[i]);
            if !(s >= 0.0) || !(a >= 0.0) {
                return Err(Error::Contract(format!(
                    "queue {i}: service {s} and arrivals {a} must be nonnegative"
                )));
            }
            if self.sinks[i] {
                next.lengths[i] = 0.0;
                continue;
            }
            let unclipped = (self.lengths[i] - s).max(0.0) + a;
            if unclipped > self.cap {
                dropped[i] = unclipped - self.cap;
                next.lengths[i] = self.cap;
            } else {
                next.lengths[i] = unclipped;
            }
        }
        Ok((next, dropped))
    }
}

/// Free-function form of [`QueueState::step`].
pub fn queue_step(q: &QueueState, served: &[f64], arrivals: &[f64]) -> Result<(QueueState, Vec<f64>)> {
    q.step(served, arrivals)
}

/// Limits requested link transfers so that no queue forwards more than it
/// held at the start of the slot. `transfers[k] = (from_queue, amount)`.
/// Requests from the same queue are served in order.
pub fn clamp_to_available(q: &QueueState, transfers: &mut [(usize, f64)]) {
    let mut left = q.lengths.clone();
    for (from, amount) in transfers.iter_mut() {
        let take = amount.min(left[*from]).max(0.0);
        left[*from] -= take;
        *amount = take;
    }
}

/// Joint CSI and QSI: the control state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub csi: ChannelState,
    pub qsi: QueueState,
}

impl SystemState {
    pub fn new(csi: ChannelState, qsi: QueueState) -> Result<Self> {
        if csi.links() != qsi.len() {
            return Err(Error::Dimension(format!(
                "channel state covers {} links but there are {} queues",
                csi.links(),
                qsi.len()
            )));
        }
        Ok(Self { csi, qsi })
    }
}

/// Per-slot subcarrier assignment and power levels (linear SNR units).
///
/// Each subcarrier has at most one owner, so `sum_l s[l][m] <= 1` holds by
/// construction; `p[l][m] > 0` is only representable for the owner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    links: usize,
    subcarriers: usize,
    owner: Vec<Option<usize>>,
    power: Vec<f64>,
}

impl Action {
    pub fn idle(links: usize, subcarriers: usize) -> Self {
        Self {
            links,
            subcarriers,
            owner: vec![None; subcarriers],
            power: vec![0.0; links * subcarriers],
        }
    }

    pub fn links(&self) -> usize {
        self.links
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    /// Gives subcarrier `m` to `link` at `power`. Any previous owner loses it.
    pub fn assign(&mut self, m: usize, link: usize, power: f64) -> Result<()> {
        if link >= self.links || m >= self.subcarriers {
            return Err(Error::Dimension(format!("assign(m={m}, l={link}) out of range")));
        }
        if !(power >= 0.0) {
            return Err(Error::Contract(format!("negative power {power}")));
        }
        if let Some(prev) = self.owner[m] {
            self.power[prev * self.subcarriers + m] = 0.0;
        }
        self.owner[m] = Some(link);
        self.power[link * self.subcarriers + m] = power;
        Ok(())
    }

    pub fn owner(&self, m: usize) -> Option<usize> {
        self.owner[m]
    }

    /// Binary indicator `s[l][m]`.
    pub fn s(&self, l: usize, m: usize) -> bool {
        self.owner[m] == Some(l)
    }

    pub fn p(&self, l: usize, m: usize) -> f64 {
        self.power[l * self.subcarriers + m]
    }

    /// Total power of link `l` over all subcarriers.
    pub fn link_power(&self, l: usize) -> f64 {
        self.power[l * self.subcarriers..(l + 1) * self.subcarriers].iter().sum()
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }

    /// Scales every power level by `factor` (used for caps and unit changes).
    pub fn map_power(&mut self, mut f: impl FnMut(f64) -> f64) {
        for p in self.power.iter_mut() {
            *p = f(*p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        for l in 0..self.links {
            for m in 0..self.subcarriers {
                let p = self.p(l, m);
                if p < 0.0 || !p.is_finite() {
                    return Err(Error::Contract(format!("p[{l}][{m}] = {p}")));
                }
                if p > 0.0 && !self.s(l, m) {
                    return Err(Error::Contract(format!("p[{l}][{m}] > 0 without assignment")));
                }
            }
        }
        Ok(())
    }
}

/// Lagrangian weights of the unified cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Queue-length weight per queue.
    pub nu: Vec<f64>,
    /// Full-buffer (drop) weight per queue.
    pub eta: Vec<f64>,
    /// Power price per transmitting node.
    pub gamma: Vec<f64>,
    /// Throughput weight per link.
    pub xi: Vec<f64>,
}

impl CostWeights {
    pub fn uniform(queues: usize, nu: f64, eta: f64, gamma: f64) -> Self {
        Self {
            nu: vec![nu; queues],
            eta: vec![eta; queues],
            gamma: vec![gamma; queues],
            xi: vec![0.0; queues],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.nu.iter().chain(&self.eta).chain(&self.gamma).chain(&self.xi);
        if all.clone().any(|w| !(*w >= 0.0)) {
            return Err(Error::Contract("cost weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `sum_q (nu Q + eta 1[Q = cap]) + sum_n gamma P_n` from raw vectors.
pub fn stage_cost_raw(queues: &[f64], cap: f64, node_power: &[f64], w: &CostWeights) -> Result<f64> {
    if w.nu.len() != queues.len() || w.eta.len() != queues.len() || w.gamma.len() != node_power.len() {
        return Err(Error::Dimension(format!(
            "weights (nu {}, eta {}, gamma {}) vs {} queues / {} nodes",
            w.nu.len(),
            w.eta.len(),
            w.gamma.len(),
            queues.len(),
            node_power.len()
        )));
    }
    let queue_part: f64 = queues
        .iter()
        .enumerate()
        .map(|(i, &q)| w.nu[i] * q + if q >= cap { w.eta[i] } else { 0.0 })
        .sum();
    let power_part: f64 = node_power.iter().zip(&w.gamma).map(|(p, g)| p * g).sum();
    Ok(queue_part + power_part)
}

/// Per-stage cost of a single-hop state and action (node = link = queue).
pub fn stage_cost(chi: &SystemState, a: &Action, w: &CostWeights) -> Result<f64> {
    if a.links() != chi.qsi.len() {
        return Err(Error::Dimension(format!(
            "action for {} links, state has {} queues",
            a.links(),
            chi.qsi.len()
        )));
    }
    let power: Vec<f64> = (0..a.links()).map(|l| a.link_power(l)).collect();
    stage_cost_raw(&chi.qsi.lengths, chi.qsi.cap, &power, w)
}

/// Little's law with data dropping: `qbar / ((1 - dbar) * lambda_bar)`.
pub fn littles_delay(qbar: f64, dbar: f64, lambda_bar: f64) -> Result<f64> {
    if !(lambda_bar > 0.0) {
        return Err(Error::UndefinedDelay(format!("arrival rate {lambda_bar} must be positive")));
    }
    if !(0.0..1.0).contains(&dbar) {
        return Err(Error::UndefinedDelay(format!("drop rate {dbar} outside [0, 1)")));
    }
    Ok(qbar / ((1.0 - dbar) * lambda_bar))
}

/// Running sums behind every reported average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsAccumulator {
    pub unit: QueueUnit,
    pub slots: u64,
    sum_q: Vec<f64>,
    full_slots: Vec<u64>,
    offered: Vec<f64>,
    dropped: Vec<f64>,
    sum_power: Vec<f64>,
    sum_throughput: Vec<f64>,
    sum_cost: f64,
    sojourn_sum: f64,
    delivered: u64,
}

impl MetricsAccumulator {
    pub fn new(unit: QueueUnit, queues: usize, links: usize) -> Self {
        Self {
            unit,
            slots: 0,
            sum_q: vec![0.0; queues],
            full_slots: vec![0; queues],
            offered: vec![0.0; queues],
            dropped: vec![0.0; queues],
            sum_power: vec![0.0; links],
            sum_throughput: vec![0.0; links],
            sum_cost: 0.0,
            sojourn_sum: 0.0,
            delivered: 0,
        }
    }

    /// Records the state observed at the start of a slot and what the slot spent.
    pub fn record_slot(&mut self, q: &QueueState, power: &[f64], throughput: &[f64], cost: f64) {
        self.slots += 1;
        for (i, &len) in q.lengths.iter().enumerate() {
            self.sum_q[i] += len;
            if len >= q.cap {
                self.full_slots[i] += 1;
            }
        }
        for (acc, p) in self.sum_power.iter_mut().zip(power) {
            *acc += p;
        }
        for (acc, r) in self.sum_throughput.iter_mut().zip(throughput) {
            *acc += r;
        }
        self.sum_cost += cost;
    }

    pub fn record_arrival(&mut self, queue: usize, amount: f64, dropped: f64) {
        self.offered[queue] += amount;
        self.dropped[queue] += dropped;
    }

    /// Sojourn of one delivered packet, in slots.
    pub fn record_delivery(&mut self, sojourn: f64) {
        self.sojourn_sum += sojourn;
        self.delivered += 1;
    }

    pub fn finalize(&self) -> Result<MetricsReport> {
        metrics_finalize(self)
    }
}

/// Time averages of one run. Rates are per slot and delays are in slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub unit: QueueUnit,
    pub slots: u64,
    pub q_bar: Vec<f64>,
    pub q_bar_total: f64,
    /// Mode-appropriate drop rate: fraction of offered packets dropped in
    /// packet mode, fraction of (queue, slot) pairs at the cap in fluid mode.
    pub d_bar: f64,
    pub d_bar_arrivals: f64,
    pub d_bar_full_slots: f64,
    pub lambda_bar: Vec<f64>,
    pub lambda_bar_total: f64,
    pub p_bar: Vec<f64>,
    pub p_bar_mean: f64,
    pub t_bar: Vec<f64>,
    pub t_bar_total: f64,
    pub avg_cost: f64,
    pub delay_littles: Option<f64>,
    pub delay_timestamped: Option<f64>,
    pub delivered: u64,
}

pub fn metrics_finalize(acc: &MetricsAccumulator) -> Result<MetricsReport> {
    if acc.slots == 0 {
        return Err(Error::EmptyAccumulator);
    }
    let t = acc.slots as f64;
    let q_bar: Vec<f64> = acc.sum_q.iter().map(|s| s / t).collect();
    let q_bar_total = q_bar.iter().sum();
    let offered: f64 = acc.offered.iter().sum();
    let dropped: f64 = acc.dropped.iter().sum();
    let d_bar_arrivals = if offered > 0.0 { dropped / offered } else { 0.0 };
    let nq = acc.full_slots.len().max(1) as f64;
    let d_bar_full_slots = acc.full_slots.iter().map(|&f| f as f64).sum::<f64>() / (t * nq);
    let lambda_bar: Vec<f64> = acc.offered.iter().map(|a| a / t).collect();
    let lambda_bar_total = offered / t;
    let p_bar: Vec<f64> = acc.sum_power.iter().map(|p| p / t).collect();
    let p_bar_mean = if p_bar.is_empty() {
        0.0
    } else {
        p_bar.iter().sum::<f64>() / p_bar.len() as f64
    };
    let t_bar: Vec<f64> = acc.sum_throughput.iter().map(|r| r / t).collect();
    let t_bar_total = t_bar.iter().sum();
    let delay_littles = littles_delay(q_bar_total, d_bar_arrivals, lambda_bar_total).ok();
    let delay_timestamped = (acc.delivered > 0).then(|| acc.sojourn_sum / acc.delivered as f64);
    let d_bar = match acc.unit {
        QueueUnit::Packet => d_bar_arrivals,
        QueueUnit::Fluid => d_bar_full_slots,
    };
    Ok(MetricsReport {
        unit: acc.unit,
        slots: acc.slots,
        q_bar,
        q_bar_total,
        d_bar,
        d_bar_arrivals,
        d_bar_full_slots,
        lambda_bar,
        lambda_bar_total,
        p_bar,
        p_bar_mean,
        t_bar,
        t_bar_total,
        avg_cost: acc.sum_cost / t,
        delay_littles,
        delay_timestamped,
        delivered: acc.delivered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn q1(len: f64, cap: f64) -> QueueState {
        QueueState::from_lengths(vec![len], cap).unwrap()
    }

    #[test]
    fn queue_step_hand_values() {
        let (n, d) = q1(3.0, 5.0).step(&[2.0], &[1.0]).unwrap();
        assert_eq!((n.lengths[0], d[0]), (2.0, 0.0));
        let (n, d) = q1(5.0, 5.0).step(&[0.0], &[2.0]).unwrap();
        assert_eq!((n.lengths[0], d[0]), (5.0, 2.0));
        let (n, d) = q1(0.0, 5.0).step(&[4.0], &[0.0]).unwrap();
        assert_eq!((n.lengths[0], d[0]), (0.0, 0.0));
    }

    #[test]
    fn queue_step_rejects_negative_inputs() {
        assert!(matches!(q1(1.0, 5.0).step(&[-1.0], &[0.0]), Err(Error::Contract(_))));
        assert!(matches!(q1(1.0, 5.0).step(&[0.0], &[-0.5]), Err(Error::Contract(_))));
        assert!(matches!(q1(1.0, 5.0).step(&[0.0, 1.0], &[0.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn sink_queues_stay_empty() {
        let q = QueueState::new(2, 10.0).unwrap().with_sinks(vec![false, true]).unwrap();
        let (n, d) = q.step(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!(n.lengths, vec![3.0, 0.0]);
        assert_eq!(d, vec![0.0, 0.0]);
    }

    #[test]
    fn clamp_limits_transfers_to_backlog() {
        let q = QueueState::from_lengths(vec![2.0, 0.0], 10.0).unwrap();
        let mut t = vec![(0, 1.5), (0, 1.5), (1, 1.0)];
        clamp_to_available(&q, &mut t);
        assert_eq!(t, vec![(0, 1.5), (0, 0.5), (1, 0.0)]);
    }

    #[test]
    fn littles_examples() {
        // 100 packets enter, 10 dropped, 90 delivered with total sojourn 90.
        let (entered, dropped, total_sojourn, horizon) = (100.0, 10.0, 90.0, 1000.0);
        let qbar = total_sojourn / horizon;
        let dbar = dropped / entered;
        let lambda = entered / horizon;
        assert_abs_diff_eq!(littles_delay(qbar, dbar, lambda).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dbar, 0.1);
        assert_abs_diff_eq!(littles_delay(2.0, 0.0, 4.0).unwrap(), 0.5);
        assert_abs_diff_eq!(littles_delay(3.0, 0.25, 2.0).unwrap(), 2.0);
        assert!(matches!(littles_delay(1.0, 1.0, 2.0), Err(Error::UndefinedDelay(_))));
        assert!(matches!(littles_delay(1.0, 0.0, 0.0), Err(Error::UndefinedDelay(_))));
    }

    fn state(lengths: Vec<f64>, cap: f64) -> SystemState {
        let n = lengths.len();
        SystemState::new(ChannelState::uniform(n, 1, 0), QueueState::from_lengths(lengths, cap).unwrap()).unwrap()
    }

    #[test]
    fn stage_cost_examples() {
        let chi = state(vec![0.0, 0.0], 5.0);
        let a = Action::idle(2, 1);
        let w = CostWeights::uniform(2, 1.0, 10.0, 0.5);
        assert_eq!(stage_cost(&chi, &a, &w).unwrap(), 0.0);

        let chi = state(vec![5.0], 5.0);
        let mut a = Action::idle(1, 1);
        a.assign(0, 0, 2.0).unwrap();
        let w = CostWeights::uniform(1, 1.0, 10.0, 0.5);
        assert_abs_diff_eq!(stage_cost(&chi, &a, &w).unwrap(), 5.0 + 10.0 + 1.0);

        let chi = state(vec![2.0, 3.0], 5.0);
        let w = CostWeights { nu: vec![1.5, 2.0], eta: vec![0.0; 2], gamma: vec![0.0; 2], xi: vec![0.0; 2] };
        let mut a = Action::idle(2, 1);
        a.assign(0, 1, 7.0).unwrap();
        assert_abs_diff_eq!(stage_cost(&chi, &a, &w).unwrap(), 1.5 * 2.0 + 2.0 * 3.0);
    }

    #[test]
    fn stage_cost_linear_in_nu() {
        let chi = state(vec![1.0, 5.0], 5.0);
        let mut a = Action::idle(2, 2);
        a.assign(1, 0, 3.0).unwrap();
        let w = CostWeights::uniform(2, 1.0, 4.0, 0.25);
        let mut w2 = w.clone();
        w2.nu.iter_mut().for_each(|v| *v *= 2.0);
        let base = stage_cost(&chi, &a, &w).unwrap();
        let doubled = stage_cost(&chi, &a, &w2).unwrap();
        assert_abs_diff_eq!(doubled - base, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn action_reassignment_keeps_single_owner() {
        let mut a = Action::idle(3, 2);
        a.assign(0, 0, 1.0).unwrap();
        a.assign(0, 2, 4.0).unwrap();
        assert!(!a.s(0, 0));
        assert_eq!(a.p(0, 0), 0.0);
        assert_eq!(a.owner(0), Some(2));
        assert_eq!(a.link_power(2), 4.0);
        a.validate().unwrap();
    }

    #[test]
    fn metrics_single_and_constant_samples() {
        let mut acc = MetricsAccumulator::new(QueueUnit::Packet, 1, 1);
        assert!(matches!(acc.finalize(), Err(Error::EmptyAccumulator)));
        acc.record_slot(&q1(4.0, 5.0), &[0.0], &[0.0], 0.0);
        assert_eq!(acc.finalize().unwrap().q_bar, vec![4.0]);

        let mut acc = MetricsAccumulator::new(QueueUnit::Fluid, 1, 1);
        for _ in 0..37 {
            acc.record_slot(&q1(2.5, 5.0), &[1.0], &[0.5], 0.0);
        }
        let r = acc.finalize().unwrap();
        assert_abs_diff_eq!(r.q_bar[0], 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p_bar[0], 1.0, epsilon = 1e-12);
        assert_eq!(r.d_bar, 0.0);
    }

    #[test]
    fn metrics_match_direct_recomputation() {
        // Synthetic trace: brute-force re-averaging is the oracle.
        let cap = 4.0;
        let trace: Vec<[f64; 2]> = (0..50).map(|t| [(t % 5) as f64, ((t * 7) % 5) as f64]).collect();
        let power: Vec<[f64; 2]> = (0..50).map(|t| [(t % 3) as f64, 0.5 * (t % 2) as f64]).collect();
        let mut acc = MetricsAccumulator::new(QueueUnit::Fluid, 2, 2);
        for (q, p) in trace.iter().zip(&power) {
            acc.record_slot(&QueueState::from_lengths(q.to_vec(), cap).unwrap(), p, &[0.0, 0.0], 0.0);
        }
        let r = acc.finalize().unwrap();
        for i in 0..2 {
            let direct = trace.iter().map(|q| q[i]).sum::<f64>() / 50.0;
            assert_abs_diff_eq!(r.q_bar[i], direct, epsilon = 1e-12);
            let direct_p = power.iter().map(|p| p[i]).sum::<f64>() / 50.0;
            assert_abs_diff_eq!(r.p_bar[i], direct_p, epsilon = 1e-12);
        }
        let full = trace.iter().flat_map(|q| q.iter()).filter(|&&v| v >= cap).count() as f64;
        assert_abs_diff_eq!(r.d_bar_full_slots, full / 100.0, epsilon = 1e-12);
    }
}
