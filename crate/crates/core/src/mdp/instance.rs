//! Finite average-cost MDP on the controlled birth-death kernel.
//!
//! A global state is one local state per link, and a local state is the joint
//! grid index of the link's subcarrier channels plus its packet count. Each
//! link's queue moves by at most one packet per slot: up with the arrival
//! probability, down with probability `service_scale * sum_m log2(1 + p g)`.
//! All channels advance independently through the channel model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alloc::spectral_efficiency;
use crate::channel::{ChannelModel, ChannelState};
use crate::error::{Error, Result};
use crate::model::{Action, CostWeights, QueueState, SystemState};

const ROW_TOL: f64 = 1e-9;

/// Joint index over `m` i.i.d. subcarrier channels with `k` levels each;
/// subcarrier 0 is the least significant digit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointChannel {
    pub k: usize,
    pub m: usize,
}

impl JointChannel {
    pub fn size(&self) -> usize {
        self.k.pow(self.m as u32)
    }

    pub fn digit(&self, c: usize, m: usize) -> usize {
        (c / self.k.pow(m as u32)) % self.k
    }

    pub fn encode(&self, digits: impl IntoIterator<Item = usize>) -> usize {
        let mut c = 0;
        let mut place = 1;
        for d in digits {
            c += d * place;
            place *= self.k;
        }
        c
    }

    /// `E[f(C') | C = c]` over independent per-subcarrier transitions.
    pub fn expect(&self, model: &ChannelModel, c: usize, f: impl Fn(usize) -> f64) -> f64 {
        let mut total = 0.0;
        self.for_each_next(model, c, |next, p| total += p * f(next));
        total
    }

    /// Calls `visit(next, prob)` for every successor with positive probability.
    pub fn for_each_next(&self, model: &ChannelModel, c: usize, mut visit: impl FnMut(usize, f64)) {
        let rows: Vec<&[f64]> = (0..self.m).map(|m| model.row(self.digit(c, m))).collect();
        let mut digits = vec![0usize; self.m];
        loop {
            let p: f64 = digits.iter().enumerate().map(|(m, &d)| rows[m][d]).product();
            if p > 0.0 {
                visit(self.encode(digits.iter().copied()), p);
            }
            let mut i = 0;
            loop {
                if i == self.m {
                    return;
                }
                digits[i] += 1;
                if digits[i] < self.k {
                    break;
                }
                digits[i] = 0;
                i += 1;
            }
        }
    }

    /// `E[f(C') | C = c]` for every `c` at once, by contracting one
    /// subcarrier axis at a time.
    pub fn expect_all(&self, model: &ChannelModel, f: &[f64]) -> Vec<f64> {
        let mut cur = f.to_vec();
        for m in 0..self.m {
            let stride = self.k.pow(m as u32);
            let mut next = vec![0.0; cur.len()];
            for (c, out) in next.iter_mut().enumerate() {
                let d = (c / stride) % self.k;
                let base = c - d * stride;
                let row = model.row(d);
                *out = (0..self.k).map(|j| row[j] * cur[base + j * stride]).sum();
            }
            cur = next;
        }
        cur
    }
}

/// Parameters of the birth-death MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpConfig {
    pub links: usize,
    pub subcarriers: usize,
    pub channel: ChannelModel,
    /// Buffer size `N_Q` in packets.
    pub buffer: usize,
    /// Per-slot arrival probability per link.
    pub arrival_prob: Vec<f64>,
    /// Departure probability per unit of spectral efficiency, per link.
    pub service_scale: Vec<f64>,
    /// Nonzero transmit power levels offered by the discrete action set.
    pub power_levels: Vec<f64>,
    pub weights: CostWeights,
}

impl MdpConfig {
    pub fn joint(&self) -> JointChannel {
        JointChannel { k: self.channel.n_states(), m: self.subcarriers }
    }

    pub fn n_local(&self) -> usize {
        self.joint().size() * (self.buffer + 1)
    }

    pub fn n_states(&self) -> usize {
        self.n_local().pow(self.links as u32)
    }

    /// Largest power any action may use on one subcarrier.
    pub fn peak_power(&self) -> f64 {
        self.power_levels.iter().cloned().fold(0.0, f64::max)
    }

    pub fn local_index(&self, chan: usize, q: usize) -> usize {
        chan * (self.buffer + 1) + q
    }

    /// `(joint channel, queue)` of a local index.
    pub fn local_parts(&self, local: usize) -> (usize, usize) {
        (local / (self.buffer + 1), local % (self.buffer + 1))
    }

    pub fn local_of(&self, state: usize, l: usize) -> usize {
        (state / self.n_local().pow(l as u32)) % self.n_local()
    }

    pub fn encode(&self, locals: &[usize]) -> usize {
        let n = self.n_local();
        locals.iter().rev().fold(0, |acc, &x| acc * n + x)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.links;
        if l == 0 || self.subcarriers == 0 || self.buffer == 0 {
            return Err(Error::Config("links, subcarriers and buffer must be positive".into()));
        }
        if self.arrival_prob.len() != l || self.service_scale.len() != l {
            return Err(Error::Dimension("per-link arrival/service vectors".into()));
        }
        if self.weights.nu.len() != l || self.weights.eta.len() != l || self.weights.gamma.len() != l {
            return Err(Error::Dimension("cost weights must have one entry per link".into()));
        }
        self.weights.validate()?;
        if self.power_levels.iter().any(|p| !(*p > 0.0)) || self.power_levels.is_empty() {
            return Err(Error::Config("power levels must be positive and nonempty".into()));
        }
        self.channel.require_irreducible()?;
        let gmax = self.channel.levels().iter().cloned().fold(0.0, f64::max);
        let peak_se = self.subcarriers as f64 * spectral_efficiency(self.peak_power(), gmax);
        for i in 0..l {
            let lam = self.arrival_prob[i];
            if !(0.0..1.0).contains(&lam) {
                return Err(Error::Config(format!("arrival probability {lam} outside [0, 1)")));
            }
            let mu = self.service_scale[i] * peak_se;
            if lam + mu > 1.0 + ROW_TOL {
                return Err(Error::Kernel(format!(
                    "link {i}: arrival {lam} plus peak departure {mu} exceeds 1; reduce power levels or slot length"
                )));
            }
        }
        Ok(())
    }

    /// Decodes a global state into CSI and QSI.
    pub fn system_state(&self, state: usize) -> SystemState {
        let joint = self.joint();
        let mut idx = Vec::with_capacity(self.links * self.subcarriers);
        let mut q = Vec::with_capacity(self.links);
        for l in 0..self.links {
            let (c, ql) = self.local_parts(self.local_of(state, l));
            idx.extend((0..self.subcarriers).map(|m| joint.digit(c, m)));
            q.push(ql as f64);
        }
        let csi = ChannelState::from_indices(self.links, self.subcarriers, idx, &self.channel).expect("in range");
        let qsi = QueueState::from_lengths(q, self.buffer as f64).expect("in range");
        SystemState::new(csi, qsi).expect("consistent")
    }

    /// Encodes CSI and QSI into a global state.
    pub fn state_of(&self, chi: &SystemState) -> usize {
        let joint = self.joint();
        let locals: Vec<usize> = (0..self.links)
            .map(|l| {
                let c = joint.encode((0..self.subcarriers).map(|m| chi.csi.index(l, m)));
                self.local_index(c, chi.qsi.lengths[l].round() as usize)
            })
            .collect();
        self.encode(&locals)
    }

    /// Per-link departure probability of `a` in `state`.
    pub fn departure_probs(&self, state: usize, a: &Action) -> Vec<f64> {
        let joint = self.joint();
        (0..self.links)
            .map(|l| {
                let (c, q) = self.local_parts(self.local_of(state, l));
                if q == 0 {
                    return 0.0;
                }
                let se: f64 = (0..self.subcarriers)
                    .filter(|&m| a.s(l, m))
                    .map(|m| spectral_efficiency(a.p(l, m), self.channel.level(joint.digit(c, m))))
                    .sum();
                self.service_scale[l] * se
            })
            .collect()
    }

    /// Birth/stay/death probabilities of one link's queue.
    pub fn queue_moves(&self, l: usize, q: usize, death: f64) -> Result<[(usize, f64); 3]> {
        let birth = if q < self.buffer { self.arrival_prob[l] } else { 0.0 };
        let stay = 1.0 - birth - death;
        if stay < -ROW_TOL {
            return Err(Error::Kernel(format!(
                "link {l}: self-transition probability {stay} is negative; action too aggressive for the slot length"
            )));
        }
        Ok([(q + 1, birth), (q.saturating_sub(1), death), (q, stay.max(0.0))])
    }

    /// Stage cost `sum_l nu Q + eta 1[Q = N_Q] + gamma * power`.
    pub fn cost(&self, state: usize, a: &Action) -> f64 {
        (0..self.links)
            .map(|l| {
                let (_, q) = self.local_parts(self.local_of(state, l));
                let w = &self.weights;
                w.nu[l] * q as f64 + if q == self.buffer { w.eta[l] } else { 0.0 } + w.gamma[l] * a.link_power(l)
            })
            .sum()
    }

    /// Local per-stage cost of link `l`.
    pub fn local_cost(&self, l: usize, q: usize, power: f64) -> f64 {
        let w = &self.weights;
        w.nu[l] * q as f64 + if q == self.buffer { w.eta[l] } else { 0.0 } + w.gamma[l] * power
    }

    /// Transition row for any feasible action, as sparse `(next, prob)` pairs.
    pub fn row_for(&self, state: usize, a: &Action) -> Result<Vec<(usize, f64)>> {
        let joint = self.joint();
        let deaths = self.departure_probs(state, a);
        let n_local = self.n_local();
        // Distribution over next local state, per link.
        let mut per_link: Vec<Vec<(usize, f64)>> = Vec::with_capacity(self.links);
        for (l, &death) in deaths.iter().enumerate() {
            let (c, q) = self.local_parts(self.local_of(state, l));
            let moves = self.queue_moves(l, q, death)?;
            let mut dist = vec![0.0; n_local];
            joint.for_each_next(&self.channel, c, |c2, pc| {
                for &(q2, pq) in &moves {
                    if pq > 0.0 {
                        dist[self.local_index(c2, q2)] += pc * pq;
                    }
                }
            });
            per_link.push(dist.into_iter().enumerate().filter(|(_, p)| *p > 0.0).collect());
        }
        let mut row: Vec<(usize, f64)> = vec![(0, 1.0)];
        for (l, dist) in per_link.iter().enumerate() {
            let place = n_local.pow(l as u32);
            row = row
                .iter()
                .flat_map(|&(s, p)| dist.iter().map(move |&(x, px)| (s + x * place, p * px)))
                .collect();
        }
        let sum: f64 = row.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > ROW_TOL {
            return Err(Error::Kernel(format!("row of state {state} sums to {sum}")));
        }
        Ok(row)
    }

    /// Every discrete action: each subcarrier idle or given to one link at
    /// one of the power levels.
    pub fn discrete_actions(&self) -> Vec<Action> {
        let per_sub = 1 + self.links * self.power_levels.len();
        let total = per_sub.pow(self.subcarriers as u32);
        (0..total)
            .map(|code| {
                let mut a = Action::idle(self.links, self.subcarriers);
                let mut rest = code;
                for m in 0..self.subcarriers {
                    let choice = rest % per_sub;
                    rest /= per_sub;
                    if choice > 0 {
                        let l = (choice - 1) / self.power_levels.len();
                        let j = (choice - 1) % self.power_levels.len();
                        a.assign(m, l, self.power_levels[j]).expect("in range");
                    }
                }
                a
            })
            .collect()
    }

    /// Draws a successor link by link, which has the law of
    /// [`row_for`](Self::row_for) without building the joint row.
    pub fn sample_next<R: Rng + ?Sized>(&self, state: usize, a: &Action, rng: &mut R) -> Result<usize> {
        let joint = self.joint();
        let deaths = self.departure_probs(state, a);
        let mut locals = Vec::with_capacity(self.links);
        for (l, &death) in deaths.iter().enumerate() {
            let (c, q) = self.local_parts(self.local_of(state, l));
            let moves = self.queue_moves(l, q, death)?;
            let u: f64 = rng.gen();
            let q2 = if u < moves[0].1 {
                moves[0].0
            } else if u < moves[0].1 + moves[1].1 {
                moves[1].0
            } else {
                q
            };
            let c2 = joint.encode((0..self.subcarriers).map(|m| self.channel.sample_next(joint.digit(c, m), rng)));
            locals.push(self.local_index(c2, q2));
        }
        Ok(self.encode(&locals))
    }
}

pub(crate) fn sample_row<R: Rng + ?Sized>(row: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(s, p) in row {
        acc += p;
        if u < acc {
            return s;
        }
    }
    row.last().map(|r| r.0).unwrap_or(0)
}

/// Enumerated kernel with precomputed rows and costs.
#[derive(Debug, Clone)]
pub struct MdpInstance {
    pub config: MdpConfig,
    pub actions: Vec<Action>,
    /// `rows[state][action]`, sparse.
    pub rows: Vec<Vec<Vec<(usize, f64)>>>,
    /// `costs[state][action]`.
    pub costs: Vec<Vec<f64>>,
}

/// Enumerates states and discrete actions and builds every kernel row.
pub fn build_instance(config: MdpConfig) -> Result<MdpInstance> {
    config.validate()?;
    let actions = config.discrete_actions();
    let n = config.n_states();
    let mut rows = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    for s in 0..n {
        let mut r = Vec::with_capacity(actions.len());
        let mut c = Vec::with_capacity(actions.len());
        for a in &actions {
            r.push(config.row_for(s, a)?);
            c.push(config.cost(s, a));
        }
        rows.push(r);
        costs.push(c);
    }
    Ok(MdpInstance { config, actions, rows, costs })
}

impl MdpInstance {
    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }
}
