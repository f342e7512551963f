//! Packet-level backpressure routing over multi-hop networks.
//!
//! Every node keeps one packet queue per commodity (per commodity and
//! remaining-hop budget for the shortest-path-aided variant). Each slot a
//! node transmits at most one packet on one outgoing link.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Discipline;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    /// Reception probability of one transmission.
    #[serde(default = "one")]
    pub success: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Commodity {
    pub source: usize,
    pub destination: usize,
    /// Per-slot probability of one exogenous packet.
    pub arrival_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoutingVariant {
    Traditional,
    /// Bias `Z = scale * H_min` added to every queue.
    SpBias { scale: f64 },
    MinResource { v: f64 },
    /// Hop-budget queues with traffic splitting weighted by `v`.
    SpAided { v: f64 },
    /// Traditional backpressure serving the newest packet first.
    Lifo,
    Divbar,
}

impl RoutingVariant {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RoutingVariant::SpBias { scale: x } | RoutingVariant::MinResource { v: x } | RoutingVariant::SpAided { v: x } if !(x >= 0.0) => {
                Err(Error::Config(format!("routing parameter {x} must be nonnegative")))
            }
            _ => Ok(()),
        }
    }

    pub fn discipline(&self) -> Discipline {
        if *self == RoutingVariant::Lifo {
            Discipline::Lifo
        } else {
            Discipline::Fifo
        }
    }

    fn hop_queues(&self) -> bool {
        matches!(self, RoutingVariant::SpAided { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub born: u64,
    pub hops: u32,
}

/// Directed graph with commodities. Topology only; queues live in
/// [`RoutingSim`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultihopNetwork {
    pub nodes: usize,
    pub links: Vec<Link>,
    pub commodities: Vec<Commodity>,
}

impl MultihopNetwork {
    pub fn new(nodes: usize, links: Vec<Link>, commodities: Vec<Commodity>) -> Result<Self> {
        let net = Self { nodes, links, commodities };
        net.validate()?;
        Ok(net)
    }

    /// `n`-hop tandem with the destination at node 0 and the source at node
    /// `n`; `bidirectional` adds the reverse links.
    pub fn tandem(n: usize, arrival_prob: f64, bidirectional: bool) -> Result<Self> {
        let mut links: Vec<Link> = (1..=n).map(|i| Link { from: i, to: i - 1, success: 1.0 }).collect();
        if bidirectional {
            links.extend((1..=n).map(|i| Link { from: i - 1, to: i, success: 1.0 }));
        }
        Self::new(n + 1, links, vec![Commodity { source: n, destination: 0, arrival_prob }])
    }

    /// Ring of `n` nodes with links both ways plus one chord per node to the
    /// node two steps ahead. Commodity 0 runs from node 0 to node `n / 2`.
    pub fn cyclic(n: usize, arrival_prob: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::Config("the cyclic topology needs at least 4 nodes".into()));
        }
        let mut links = Vec::new();
        for i in 0..n {
            links.push(Link { from: i, to: (i + 1) % n, success: 1.0 });
            links.push(Link { from: (i + 1) % n, to: i, success: 1.0 });
            links.push(Link { from: i, to: (i + 2) % n, success: 1.0 });
        }
        Self::new(n, links, vec![Commodity { source: 0, destination: n / 2, arrival_prob }])
    }

    /// Source node 1 one hop from destination node 0, with `k` dead-end
    /// neighbours hanging off the source.
    pub fn trap(k: usize, arrival_prob: f64) -> Result<Self> {
        let mut links = vec![Link { from: 1, to: 0, success: 1.0 }];
        for i in 2..k + 2 {
            links.push(Link { from: 1, to: i, success: 1.0 });
            links.push(Link { from: i, to: 1, success: 1.0 });
        }
        Self::new(k + 2, links, vec![Commodity { source: 1, destination: 0, arrival_prob }])
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 {
            return Err(Error::Config("network has no nodes".into()));
        }
        for (i, l) in self.links.iter().enumerate() {
            if l.from >= self.nodes || l.to >= self.nodes || l.from == l.to {
                return Err(Error::Config(format!("link {i} has invalid endpoints {} -> {}", l.from, l.to)));
            }
            if !(0.0..=1.0).contains(&l.success) {
                return Err(Error::Config(format!("link {i} success probability {} outside [0, 1]", l.success)));
            }
        }
        for (c, k) in self.commodities.iter().enumerate() {
            if k.source >= self.nodes || k.destination >= self.nodes || k.source == k.destination {
                return Err(Error::Config(format!("commodity {c} has invalid endpoints")));
            }
            if !(0.0..=1.0).contains(&k.arrival_prob) {
                return Err(Error::Config(format!("commodity {c} arrival probability outside [0, 1]")));
            }
            shortest_hops(self, k.source, c)?;
        }
        Ok(())
    }

    pub fn outgoing(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.links.len()).filter(move |&l| self.links[l].from == n)
    }

    /// Hop distance from every node to commodity `c`'s destination, `None`
    /// where unreachable.
    pub fn hop_table(&self, c: usize) -> Vec<Option<usize>> {
        let dest = self.commodities[c].destination;
        let mut dist = vec![None; self.nodes];
        dist[dest] = Some(0);
        let mut frontier = VecDeque::from([dest]);
        while let Some(v) = frontier.pop_front() {
            let d = dist[v].expect("visited");
            for l in &self.links {
                if l.to == v && dist[l.from].is_none() {
                    dist[l.from] = Some(d + 1);
                    frontier.push_back(l.from);
                }
            }
        }
        dist
    }
}

/// Minimum hop count from `node` to commodity `c`'s destination.
pub fn shortest_hops(net: &MultihopNetwork, node: usize, c: usize) -> Result<usize> {
    net.hop_table(c)[node].ok_or(Error::Unreachable { node, destination: net.commodities[c].destination })
}

/// Differential of queues `q_s` and `q_d` (with biases) under a
/// single-queue-per-commodity variant.
pub fn link_backpressure(variant: &RoutingVariant, q_s: f64, q_d: f64, z_s: f64, z_d: f64) -> f64 {
    match *variant {
        RoutingVariant::SpBias { .. } => (q_s + z_s) - (q_d + z_d),
        RoutingVariant::MinResource { v } => q_s - q_d - v,
        _ => q_s - q_d,
    }
}

/// Hop-budget differential: `Q_{s,h} - Q_{d,h-1}`, or negative infinity when
/// `h - 1` is below the receiver's minimum hop count.
pub fn hop_backpressure(q_sh: f64, q_d_hm1: f64, h: usize, hmin_d: usize) -> f64 {
    if h == 0 || h - 1 < hmin_d {
        f64::NEG_INFINITY
    } else {
        q_sh - q_d_hm1
    }
}

/// Success-probability-weighted sum of positive differentials.
pub fn divbar_weight(outcomes: &[(f64, f64)]) -> f64 {
    outcomes.iter().map(|&(p, dq)| p * dq.max(0.0)).sum()
}

/// Receiver with the largest positive differential among the successful
/// ones, `None` to retain the packet.
pub fn divbar_route(receivers: &[(usize, f64, bool)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(node, dq, ok) in receivers {
        if ok && dq > 0.0 && best.map_or(true, |(_, b)| dq > b) {
            best = Some((node, dq));
        }
    }
    best.map(|(n, _)| n)
}

/// Hop budget for new arrivals: `argmin_h V h + Q_h` over admissible
/// budgets, ties to the smallest.
pub fn traffic_split(v: f64, hop_queues: &[f64], hmin: usize) -> usize {
    let mut best = (hmin, f64::INFINITY);
    for (h, &q) in hop_queues.iter().enumerate().skip(hmin.max(1)) {
        let score = v * h as f64 + q;
        if score < best.1 {
            best = (h, score);
        }
    }
    best.0
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn growth_exponent(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Config("growth fit needs two or more positive points".into()));
    }
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |a, &(x, y)| (a.0 + x.ln() / n, a.1 + y.ln() / n));
    let sxy: f64 = points.iter().map(|&(x, y)| (x.ln() - mx) * (y.ln() - my)).sum();
    let sxx: f64 = points.iter().map(|&(x, _)| (x.ln() - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("growth fit needs distinct abscissae".into()));
    }
    Ok(sxy / sxx)
}

/// One scheduled transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    pub node: usize,
    pub commodity: usize,
    /// Hop-budget queue served (0 without hop queues).
    pub hop: usize,
    /// Chosen link; `None` for a DIVBAR broadcast.
    pub link: Option<usize>,
    pub weight: f64,
}

/// Per-slot bookkeeping of one (node, commodity) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotFlow {
    pub inflow: usize,
    pub exogenous: usize,
    pub outflow: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub slots: u64,
    pub mean_backlog: f64,
    /// Time-average backlog per node, summed over commodities.
    pub node_backlog: Vec<f64>,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Mean sojourn in slots of delivered packets born after warm-up.
    pub mean_delay: f64,
    pub mean_hops: f64,
}

/// Simulation state of one network under one variant.
#[derive(Debug, Clone)]
pub struct RoutingSim {
    pub net: MultihopNetwork,
    pub variant: RoutingVariant,
    pub buffer: Option<usize>,
    hops: Vec<Vec<Option<usize>>>,
    depth: usize,
    queues: Vec<VecDeque<Packet>>,
    pub slot: u64,
}

impl RoutingSim {
    pub fn new(net: MultihopNetwork, variant: RoutingVariant, buffer: Option<usize>) -> Result<Self> {
        net.validate()?;
        variant.validate()?;
        let hops = (0..net.commodities.len()).map(|c| net.hop_table(c)).collect();
        let depth = if variant.hop_queues() { net.nodes } else { 1 };
        let queues = vec![VecDeque::new(); net.nodes * net.commodities.len() * depth];
        Ok(Self { net, variant, buffer, hops, depth, queues, slot: 0 })
    }

    fn qi(&self, n: usize, c: usize, h: usize) -> usize {
        (n * self.net.commodities.len() + c) * self.depth + h
    }

    fn is_dest(&self, n: usize, c: usize) -> bool {
        self.net.commodities[c].destination == n
    }

    /// Packets of commodity `c` at node `n`, over all hop budgets.
    pub fn backlog(&self, n: usize, c: usize) -> usize {
        (0..self.depth).map(|h| self.queues[self.qi(n, c, h)].len()).sum()
    }

    pub fn hop_backlog(&self, n: usize, c: usize, h: usize) -> usize {
        self.queues[self.qi(n, c, h)].len()
    }

    pub fn total_backlog(&self) -> usize {
        self.queues.iter().map(|q| q.len()).sum()
    }

    fn bias(&self, n: usize, c: usize) -> f64 {
        match self.variant {
            RoutingVariant::SpBias { scale } => scale * self.hops[c][n].unwrap_or(self.net.nodes) as f64,
            _ => 0.0,
        }
    }

    /// `(backpressure, hop)` of link `l` for commodity `c`.
    pub fn backpressure(&self, l: usize, c: usize) -> (f64, usize) {
        let link = self.net.links[l];
        if self.variant.hop_queues() {
            let Some(hmin_d) = self.hops[c][link.to] else {
                return (f64::NEG_INFINITY, 0);
            };
            let mut best = (f64::NEG_INFINITY, 0);
            for h in 1..self.depth {
                let qs = self.hop_backlog(link.from, c, h) as f64;
                let qd = if self.is_dest(link.to, c) { 0.0 } else { self.hop_backlog(link.to, c, h - 1) as f64 };
                let bp = hop_backpressure(qs, qd, h, hmin_d);
                if bp > best.0 {
                    best = (bp, h);
                }
            }
            return best;
        }
        let qs = self.backlog(link.from, c) as f64;
        let qd = if self.is_dest(link.to, c) { 0.0 } else { self.backlog(link.to, c) as f64 };
        (link_backpressure(&self.variant, qs, qd, self.bias(link.from, c), self.bias(link.to, c)), 0)
    }

    /// Node-exclusive schedule from the current queues. Each node takes its
    /// largest positive backpressure over (link, commodity); ties go to the
    /// lowest commodity and then to a uniformly drawn link.
    pub fn schedule<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Transmission> {
        let nc = self.net.commodities.len();
        let mut out = Vec::new();
        for n in 0..self.net.nodes {
            if self.variant == RoutingVariant::Divbar {
                let mut best: Option<(usize, f64)> = None;
                for c in 0..nc {
                    if self.is_dest(n, c) {
                        continue;
                    }
                    let w = divbar_weight(
                        &self.net.outgoing(n).map(|l| (self.net.links[l].success, self.backpressure(l, c).0)).collect::<Vec<_>>(),
                    );
                    if w > 0.0 && best.map_or(true, |(_, b)| w > b) {
                        best = Some((c, w));
                    }
                }
                if let Some((c, w)) = best {
                    if self.backlog(n, c) > 0 {
                        out.push(Transmission { node: n, commodity: c, hop: 0, link: None, weight: w });
                    }
                }
                continue;
            }
            let mut best = 0.0;
            let mut cands: Vec<(usize, usize, usize)> = Vec::new();
            for c in 0..nc {
                if self.is_dest(n, c) {
                    continue;
                }
                for l in self.net.outgoing(n) {
                    let (bp, h) = self.backpressure(l, c);
                    if bp <= 0.0 || self.hop_backlog(n, c, h) == 0 {
                        continue;
                    }
                    if bp > best {
                        best = bp;
                        cands.clear();
                    }
                    if bp == best && cands.first().map_or(true, |x| x.0 == c) {
                        cands.push((c, l, h));
                    }
                }
            }
            if !cands.is_empty() {
                let (c, l, h) = cands[rng.gen_range(0..cands.len())];
                out.push(Transmission { node: n, commodity: c, hop: h, link: Some(l), weight: best });
            }
        }
        out
    }

    fn pop(&mut self, i: usize) -> Option<Packet> {
        match self.variant.discipline() {
            Discipline::Fifo => self.queues[i].pop_front(),
            Discipline::Lifo => self.queues[i].pop_back(),
        }
    }

    fn push(&mut self, i: usize, p: Packet) -> bool {
        if self.buffer.is_some_and(|b| self.queues[i].len() >= b) {
            return false;
        }
        self.queues[i].push_back(p);
        true
    }

    /// Inserts one packet of commodity `c` at `node`.
    pub fn inject(&mut self, node: usize, c: usize) -> bool {
        let h = self.arrival_hop(node, c);
        let i = self.qi(node, c, h);
        self.push(i, Packet { born: self.slot, hops: 0 })
    }

    fn arrival_hop(&self, node: usize, c: usize) -> usize {
        match self.variant {
            RoutingVariant::SpAided { v } => {
                let q: Vec<f64> = (0..self.depth).map(|h| self.hop_backlog(node, c, h) as f64).collect();
                traffic_split(v, &q, self.hops[c][node].unwrap_or(self.depth))
            }
            _ => 0,
        }
    }

    /// Advances one slot: schedule, transmit, then admit exogenous arrivals.
    /// Returns the per-(node, commodity) flows and the packets delivered.
    pub fn step<R: Rng + ?Sized>(&mut self, arrivals: &[bool], rng: &mut R) -> Result<(Vec<SlotFlow>, Vec<Packet>)> {
        let nc = self.net.commodities.len();
        if arrivals.len() != nc {
            return Err(Error::Dimension(format!("{} arrival flags for {nc} commodities", arrivals.len())));
        }
        let mut flows = vec![SlotFlow::default(); self.net.nodes * nc];
        let plan = self.schedule(rng);
        let mut moves: Vec<(usize, usize, usize, Packet)> = Vec::new();
        for tx in plan {
            let (c, n) = (tx.commodity, tx.node);
            let receiver = match tx.link {
                Some(l) => {
                    let link = self.net.links[l];
                    (link.success >= 1.0 || rng.gen_bool(link.success)).then_some((link.to, tx.hop.saturating_sub(1)))
                }
                None => {
                    let recv: Vec<(usize, f64, bool)> = self
                        .net
                        .outgoing(n)
                        .map(|l| {
                            let link = self.net.links[l];
                            (link.to, self.backpressure(l, c).0, rng.gen_bool(link.success))
                        })
                        .collect();
                    divbar_route(&recv).map(|to| (to, 0))
                }
            };
            if let Some((to, h2)) = receiver {
                let i = self.qi(n, c, tx.hop);
                let mut p = self.pop(i).expect("scheduled queues are nonempty");
                p.hops += 1;
                flows[n * nc + c].outflow += 1;
                moves.push((to, c, h2, p));
            }
        }
        let mut delivered = Vec::new();
        for (to, c, h, p) in moves {
            if self.is_dest(to, c) {
                delivered.push(p);
                continue;
            }
            let i = self.qi(to, c, h);
            if self.push(i, p) {
                flows[to * nc + c].inflow += 1;
            } else {
                flows[to * nc + c].inflow += 1;
                flows[to * nc + c].dropped += 1;
            }
        }
        for c in 0..nc {
            if arrivals[c] {
                let s = self.net.commodities[c].source;
                flows[s * nc + c].exogenous += 1;
                if !self.inject(s, c) {
                    flows[s * nc + c].dropped += 1;
                }
            }
        }
        self.slot += 1;
        Ok((flows, delivered))
    }

    /// Runs `slots` slots with Bernoulli arrivals; packets born before
    /// `warmup` and slots before it are excluded from the report.
    pub fn run<R: Rng + ?Sized>(&mut self, slots: u64, warmup: u64, arr_rng: &mut R, net_rng: &mut R) -> Result<RoutingReport> {
        let nc = self.net.commodities.len();
        let mut rep = RoutingReport { node_backlog: vec![0.0; self.net.nodes], ..Default::default() };
        let (mut delay_sum, mut hop_sum) = (0u64, 0u64);
        for _ in 0..slots {
            let measured = self.slot >= warmup;
            if measured {
                rep.slots += 1;
                rep.mean_backlog += self.total_backlog() as f64;
                for n in 0..self.net.nodes {
                    rep.node_backlog[n] += (0..nc).map(|c| self.backlog(n, c)).sum::<usize>() as f64;
                }
            }
            let arrivals: Vec<bool> = self.net.commodities.iter().map(|k| arr_rng.gen_bool(k.arrival_prob)).collect();
            if measured {
                rep.generated += arrivals.iter().filter(|&&a| a).count() as u64;
            }
            let now = self.slot;
            let (flows, delivered) = self.step(&arrivals, net_rng)?;
            if measured {
                rep.dropped += flows.iter().map(|f| f.dropped as u64).sum::<u64>();
            }
            for p in delivered.into_iter().filter(|p| p.born >= warmup) {
                rep.delivered += 1;
                delay_sum += now - p.born;
                hop_sum += p.hops as u64;
            }
        }
        if rep.slots > 0 {
            rep.mean_backlog /= rep.slots as f64;
            for b in &mut rep.node_backlog {
                *b /= rep.slots as f64;
            }
        }
        if rep.delivered > 0 {
            rep.mean_delay = delay_sum as f64 / rep.delivered as f64;
            rep.mean_hops = hop_sum as f64 / rep.delivered as f64;
        }
        Ok(rep)
    }
}

/// Hops taken by a single packet injected at commodity `c`'s source into an
/// otherwise empty network, or `None` if it is not delivered within
/// `max_slots`.
pub fn lone_packet_hops<R: Rng + ?Sized>(
    net: &MultihopNetwork,
    variant: RoutingVariant,
    c: usize,
    max_slots: u64,
    rng: &mut R,
) -> Result<Option<u32>> {
    let mut sim = RoutingSim::new(net.clone(), variant, None)?;
    sim.inject(net.commodities[c].source, c);
    let none = vec![false; net.commodities.len()];
    for _ in 0..max_slots {
        let (_, delivered) = sim.step(&none, rng)?;
        if let Some(p) = delivered.first() {
            return Ok(Some(p.hops));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backpressure_hand_values() {
        assert_eq!(link_backpressure(&RoutingVariant::Traditional, 5.0, 3.0, 0.0, 0.0), 2.0);
        assert_eq!(link_backpressure(&RoutingVariant::MinResource { v: 4.0 }, 5.0, 3.0, 0.0, 0.0), -2.0);
        assert_eq!(link_backpressure(&RoutingVariant::SpBias { scale: 1.0 }, 5.0, 3.0, 2.0, 1.0), 3.0);
        assert_eq!(hop_backpressure(4.0, 0.0, 2, 2), f64::NEG_INFINITY);
        assert_eq!(hop_backpressure(4.0, 1.0, 3, 2), 3.0);
    }

    #[test]
    fn empty_network_schedules_nothing() {
        let sim = RoutingSim::new(MultihopNetwork::tandem(3, 0.5, true).unwrap(), RoutingVariant::Traditional, None).unwrap();
        assert!(sim.schedule(&mut ChaCha8Rng::seed_from_u64(0)).is_empty());
    }

    #[test]
    fn larger_commodity_differential_wins() {
        let net = MultihopNetwork::new(
            2,
            vec![Link { from: 0, to: 1, success: 1.0 }],
            vec![
                Commodity { source: 0, destination: 1, arrival_prob: 0.0 },
                Commodity { source: 0, destination: 1, arrival_prob: 0.0 },
            ],
        )
        .unwrap();
        let mut sim = RoutingSim::new(net, RoutingVariant::Traditional, None).unwrap();
        for _ in 0..3 {
            sim.inject(0, 0);
        }
        for _ in 0..7 {
            sim.inject(0, 1);
        }
        let plan = sim.schedule(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(plan.len(), 1);
        assert_eq!(plan[0].commodity, 1);
    }

    #[test]
    fn separable_rates_serve_every_positive_link() {
        // Three disjoint one-hop pairs: every backlogged node sends.
        let links = (0..3).map(|i| Link { from: 2 * i, to: 2 * i + 1, success: 1.0 }).collect();
        let comms = (0..3).map(|i| Commodity { source: 2 * i, destination: 2 * i + 1, arrival_prob: 0.0 }).collect();
        let mut sim = RoutingSim::new(MultihopNetwork::new(6, links, comms).unwrap(), RoutingVariant::Traditional, None).unwrap();
        sim.inject(0, 0);
        sim.inject(4, 2);
        let plan = sim.schedule(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(plan.iter().map(|t| t.node).collect::<Vec<_>>(), vec![0, 4]);
    }

    #[test]
    fn growth_exponent_of_power_law() {
        let pts: Vec<(f64, f64)> = [2.0, 4.0, 8.0].iter().map(|&n: &f64| (n, 3.0 * n * n)).collect();
        assert!((growth_exponent(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert!(growth_exponent(&pts[..1]).is_err());
    }

    #[test]
    fn traffic_split_hand_values() {
        assert_eq!(traffic_split(1.0, &[0.0; 5], 2), 2);
        assert_eq!(traffic_split(1.0, &[0.0, 0.0, 5.0, 0.0, 0.0], 2), 3);
        assert_eq!(traffic_split(1e9, &[0.0, 0.0, 1e6, 0.0, 0.0], 2), 2);
    }

    #[test]
    fn divbar_hand_values() {
        assert_eq!(divbar_weight(&[(0.5, 4.0)]), 2.0);
        assert_eq!(divbar_route(&[(1, 3.0, false), (2, 5.0, false)]), None);
        assert_eq!(divbar_route(&[(1, 1.0, true), (2, 6.0, true)]), Some(2));
    }

    #[test]
    fn shortest_hops_hand_values() {
        let line = MultihopNetwork::tandem(4, 0.1, false).unwrap();
        assert_eq!(shortest_hops(&line, 0, 0).unwrap(), 0);
        assert_eq!(shortest_hops(&line, 4, 0).unwrap(), 4);
        for n in 0..=4 {
            assert_eq!(shortest_hops(&line, n, 0).unwrap(), n);
        }
    }

    #[test]
    fn unreachable_source_is_rejected() {
        let r = MultihopNetwork::new(3, vec![Link { from: 1, to: 0, success: 1.0 }], vec![Commodity { source: 2, destination: 0, arrival_prob: 0.1 }]);
        assert!(matches!(r, Err(Error::Unreachable { node: 2, destination: 0 })));
    }

    fn conservation_holds(variant: RoutingVariant, seed: u64) {
        let mut net = MultihopNetwork::cyclic(6, 0.4).unwrap();
        net.commodities.push(Commodity { source: 3, destination: 1, arrival_prob: 0.3 });
        for l in &mut net.links {
            l.success = 0.8;
        }
        let mut sim = RoutingSim::new(net, variant, Some(20)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nc = sim.net.commodities.len();
        for _ in 0..2000 {
            let before: Vec<usize> = (0..6 * nc).map(|i| sim.backlog(i / nc, i % nc)).collect();
            let arrivals: Vec<bool> = (0..nc).map(|_| rng.gen_bool(0.4)).collect();
            let (flows, _) = sim.step(&arrivals, &mut rng).unwrap();
            for i in 0..6 * nc {
                let f = flows[i];
                let after = sim.backlog(i / nc, i % nc) as i64;
                assert_eq!(after - before[i] as i64, (f.inflow + f.exogenous) as i64 - f.outflow as i64 - f.dropped as i64);
                if sim.is_dest(i / nc, i % nc) {
                    assert_eq!(after, 0);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn flow_conservation(seed in 0u64..1000, k in 0usize..6) {
            let variant = [
                RoutingVariant::Traditional,
                RoutingVariant::SpBias { scale: 1.0 },
                RoutingVariant::MinResource { v: 1.5 },
                RoutingVariant::SpAided { v: 1.0 },
                RoutingVariant::Lifo,
                RoutingVariant::Divbar,
            ][k];
            conservation_holds(variant, seed);
        }
    }

    #[test]
    fn lifo_and_fifo_share_queue_paths() {
        let net = MultihopNetwork::tandem(4, 0.6, true).unwrap();
        let mut a = RoutingSim::new(net.clone(), RoutingVariant::Traditional, None).unwrap();
        let mut b = RoutingSim::new(net, RoutingVariant::Lifo, None).unwrap();
        let (mut ra, mut rb) = (ChaCha8Rng::seed_from_u64(8), ChaCha8Rng::seed_from_u64(8));
        let mut arr = ChaCha8Rng::seed_from_u64(9);
        let (mut da, mut db) = (0u64, 0u64);
        for _ in 0..20_000 {
            let x = [arr.gen_bool(0.6)];
            let (_, pa) = a.step(&x, &mut ra).unwrap();
            let (_, pb) = b.step(&x, &mut rb).unwrap();
            for n in 0..5 {
                assert_eq!(a.backlog(n, 0), b.backlog(n, 0));
            }
            da += pa.iter().map(|p| p.born).sum::<u64>();
            db += pb.iter().map(|p| p.born).sum::<u64>();
        }
        assert_ne!(da, db);
    }

    #[test]
    fn sp_bias_lone_packet_takes_shortest_path() {
        let net = MultihopNetwork::cyclic(8, 0.0).unwrap();
        let hmin = shortest_hops(&net, 0, 0).unwrap() as u32;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let h = lone_packet_hops(&net, RoutingVariant::SpBias { scale: 1.0 }, 0, 1000, &mut rng).unwrap();
            assert_eq!(h, Some(hmin));
        }
    }
}
