//! Per-link potential functions: the action rule they induce, the online
//! representative-state learner, and an offline solver for its fixed point.

use serde::{Deserialize, Serialize};

use super::instance::{JointChannel, MdpConfig};
use super::step::StepSize;
use crate::alloc::{allocate, LinkBid};
use crate::channel::ChannelModel;
use crate::error::{Error, Result};
use crate::model::{Action, SystemState};

/// `V~_l` over local states `(joint channel c, queue q)` stored at
/// `c * (buffer + 1) + q`. The reference local state is `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialTable {
    pub joint: JointChannel,
    pub buffer: usize,
    pub values: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
}

impl PotentialTable {
    pub fn new(links: usize, joint: JointChannel, buffer: usize) -> Self {
        let n = joint.size() * (buffer + 1);
        Self {
            joint,
            buffer,
            values: vec![vec![0.0; n]; links],
            counts: vec![vec![0; n]; links],
        }
    }

    /// Table linear in the queue, `slope_l * q`, with the reference at 0.
    /// A flat start never transmits, so queues fill and the reference state
    /// is never revisited; a positive slope avoids that.
    pub fn seeded(joint: JointChannel, buffer: usize, slopes: &[f64]) -> Self {
        let mut t = Self::new(slopes.len(), joint, buffer);
        for (l, &k) in slopes.iter().enumerate() {
            for c in 0..joint.size() {
                for q in 0..=buffer {
                    let i = t.index(c, q);
                    t.values[l][i] = k * q as f64;
                }
            }
        }
        t
    }

    pub fn links(&self) -> usize {
        self.values.len()
    }

    pub fn index(&self, c: usize, q: usize) -> usize {
        c * (self.buffer + 1) + q
    }

    pub fn value(&self, l: usize, c: usize, q: usize) -> f64 {
        self.values[l][self.index(c, q)]
    }

    /// `E[V~_l(H', q) | H_l = c]`.
    pub fn expected(&self, l: usize, model: &ChannelModel, c: usize, q: usize) -> f64 {
        self.joint.expect(model, c, |c2| self.value(l, c2, q))
    }

    /// `E[V~_l(H', q) | c] - E[V~_l(H', q - 1) | c]`, zero at `q = 0`.
    pub fn delta(&self, l: usize, model: &ChannelModel, c: usize, q: usize) -> f64 {
        if q == 0 {
            return 0.0;
        }
        self.joint
            .expect(model, c, |c2| self.value(l, c2, q) - self.value(l, c2, q - 1))
    }

    pub fn reference_is_zero(&self) -> bool {
        self.values.iter().all(|v| v[0] == 0.0)
    }
}

/// Coefficients turning potential differentials into water levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VPolicyParams {
    /// Departure probability per nat of spectral efficiency, per link.
    pub rate_coeff: Vec<f64>,
    pub gamma: Vec<f64>,
    pub peak: f64,
}

impl VPolicyParams {
    pub fn from_config(cfg: &MdpConfig) -> Self {
        Self {
            rate_coeff: cfg.service_scale.iter().map(|s| s / std::f64::consts::LN_2).collect(),
            gamma: cfg.weights.gamma.clone(),
            peak: cfg.peak_power(),
        }
    }
}

fn local_channel(joint: &JointChannel, chi: &SystemState, l: usize) -> usize {
    joint.encode((0..joint.m).map(|m| chi.csi.index(l, m)))
}

/// Water level `rate_coeff * dV~(Q_l) / gamma_l` per link, argmax-positive
/// subcarrier assignment, and no allocation for empty queues.
pub fn approx_v_action(chi: &SystemState, model: &ChannelModel, tbl: &PotentialTable, params: &VPolicyParams) -> Result<Action> {
    if tbl.links() != chi.qsi.len() || params.rate_coeff.len() != tbl.links() || params.gamma.len() != tbl.links() {
        return Err(Error::Dimension("potential table, parameters and state disagree on link count".into()));
    }
    let bids: Vec<LinkBid> = (0..tbl.links())
        .map(|l| {
            let q = chi.qsi.lengths[l].round() as usize;
            let c = local_channel(&tbl.joint, chi, l);
            let w = if q == 0 { 0.0 } else { params.rate_coeff[l] * tbl.delta(l, model, c, q) };
            LinkBid::new(w, params.gamma[l])
        })
        .collect();
    allocate(&chi.csi, model, &bids, params.peak)
}

/// One slot seen by the learner: local channel and queue of every link at
/// `t`, the power each link spent, and every queue at `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VObservation {
    pub chan: Vec<usize>,
    pub q: Vec<usize>,
    pub power: Vec<f64>,
    pub next_q: Vec<usize>,
}

/// Snapshot from the most recent slot spent in the global reference state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefCache {
    pub chan: Vec<usize>,
    pub next_q: Vec<usize>,
    /// Local stage cost of each link at that slot.
    pub cost: Vec<f64>,
}

/// How the continuation at the cached reference slot enters update targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceTerm {
    /// The queue lengths that followed the reference slot.
    Sampled,
    /// Averaged over the arrival at the reference slot. The sampled form is
    /// correlated with the states visited right after a reference visit,
    /// which biases the entries nearest the reference.
    #[default]
    Averaged,
}

/// Per-link cost weights and arrival probabilities seen by the learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalCost {
    pub nu: Vec<f64>,
    pub eta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub buffer: usize,
    pub arrival_prob: Vec<f64>,
    pub reference: ReferenceTerm,
}

impl LocalCost {
    pub fn from_config(cfg: &MdpConfig) -> Self {
        Self {
            nu: cfg.weights.nu.clone(),
            eta: cfg.weights.eta.clone(),
            gamma: cfg.weights.gamma.clone(),
            buffer: cfg.buffer,
            arrival_prob: cfg.arrival_prob.clone(),
            reference: ReferenceTerm::Averaged,
        }
    }

    pub fn with_reference(mut self, reference: ReferenceTerm) -> Self {
        self.reference = reference;
        self
    }

    /// `E[f(Q(t+1))]` at a reference slot of link `l` with sampled successor
    /// `next_q`.
    pub fn reference_average(&self, l: usize, next_q: usize, f: impl Fn(usize) -> f64) -> f64 {
        match self.reference {
            ReferenceTerm::Sampled => f(next_q),
            ReferenceTerm::Averaged => {
                let lam = self.arrival_prob[l];
                (1.0 - lam) * f(0) + lam * f(1)
            }
        }
    }

    pub fn of(&self, l: usize, q: usize, power: f64) -> f64 {
        self.nu[l] * q as f64 + if q == self.buffer { self.eta[l] } else { 0.0 } + self.gamma[l] * power
    }
}

/// The link whose local state is off-reference when all others are at the
/// reference, `None` for the reference state itself or for states with two
/// or more links off-reference.
pub fn representative_link(chan: &[usize], q: &[usize]) -> Option<Option<usize>> {
    let off: Vec<usize> = (0..chan.len()).filter(|&l| chan[l] != 0 || q[l] != 0).collect();
    match off.len() {
        0 => Some(None),
        1 => Some(Some(off[0])),
        _ => None,
    }
}

/// Sum over links of `E[V~_l(H', next_q_l) | chan_l]`.
fn sum_expected(tbl: &PotentialTable, model: &ChannelModel, chan: &[usize], next_q: &[usize]) -> f64 {
    (0..tbl.links()).map(|l| tbl.expected(l, model, chan[l], next_q[l])).sum()
}

/// One representative-state update. Returns the absolute change made.
///
/// The observed relative value `g_l + sum_l' E[V~_l'(H', Q_l'(t+1)) | H_l'(t)]`
/// minus the same expression at the cached reference slot (with current
/// tables) is the target; the entry moves toward it by `eps_k`, where `k` is
/// the entry's visit count.
pub fn learn_v_update(
    tbl: &mut PotentialTable,
    model: &ChannelModel,
    cost: &LocalCost,
    obs: &VObservation,
    cache: &RefCache,
    step: &StepSize,
) -> Result<f64> {
    let l = match representative_link(&obs.chan, &obs.q) {
        Some(Some(l)) => l,
        Some(None) => return Err(Error::Contract("the reference state is never updated".into())),
        None => return Err(Error::Contract("more than one link is off its reference state".into())),
    };
    let here = cost.of(l, obs.q[l], obs.power[l]) + sum_expected(tbl, model, &obs.chan, &obs.next_q);
    let there = cache.cost[l]
        + (0..tbl.links())
            .map(|k| cost.reference_average(k, cache.next_q[k], |q| tbl.expected(k, model, cache.chan[k], q)))
            .sum::<f64>();
    let idx = tbl.index(obs.chan[l], obs.q[l]);
    tbl.counts[l][idx] += 1;
    let eps = step.at(tbl.counts[l][idx]);
    let old = tbl.values[l][idx];
    let new = old + eps * (here - there - old);
    tbl.values[l][idx] = new;
    Ok((new - old).abs())
}

/// Online per-link potential learning with reference-visit caching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialLearner {
    pub table: PotentialTable,
    pub step: StepSize,
    pub cost: LocalCost,
    pub cache: Option<RefCache>,
    /// `||V~_t - V~_{t-1}||_inf` of the latest slot.
    pub last_change: f64,
    pub updates: u64,
}

impl PotentialLearner {
    pub fn new(cfg: &MdpConfig, step: StepSize) -> Self {
        Self::with_table(cfg, step, PotentialTable::seeded(cfg.joint(), cfg.buffer, &default_slopes(cfg)))
    }

    pub fn with_table(cfg: &MdpConfig, step: StepSize, table: PotentialTable) -> Self {
        Self {
            table,
            step,
            cost: LocalCost::from_config(cfg),
            cache: None,
            last_change: 0.0,
            updates: 0,
        }
    }

    /// Feeds one transition. Reference slots refresh the cache; representative
    /// slots update one entry once a cache exists; all other slots are ignored.
    pub fn observe(&mut self, model: &ChannelModel, obs: &VObservation) -> Result<f64> {
        self.last_change = 0.0;
        match representative_link(&obs.chan, &obs.q) {
            Some(None) => {
                let cost = (0..obs.chan.len()).map(|l| self.cost.of(l, obs.q[l], obs.power[l])).collect();
                self.cache = Some(RefCache { chan: obs.chan.clone(), next_q: obs.next_q.clone(), cost });
            }
            Some(Some(_)) => {
                if let Some(cache) = &self.cache {
                    self.last_change = learn_v_update(&mut self.table, model, &self.cost, obs, cache, &self.step)?;
                    self.updates += 1;
                }
            }
            None => {}
        }
        Ok(self.last_change)
    }
}

/// Initial slope per link: the queue weight plus the drop weight spread over
/// the buffer.
pub fn default_slopes(cfg: &MdpConfig) -> Vec<f64> {
    (0..cfg.links)
        .map(|l| cfg.weights.nu[l] * cfg.buffer as f64 + cfg.weights.eta[l] / cfg.buffer as f64)
        .collect()
}

/// Builds a learner observation from two consecutive system states.
pub fn observation(joint: &JointChannel, chi: &SystemState, a: &Action, next: &SystemState) -> VObservation {
    let links = chi.qsi.len();
    VObservation {
        chan: (0..links).map(|l| local_channel(joint, chi, l)).collect(),
        q: chi.qsi.lengths.iter().map(|q| q.round() as usize).collect(),
        power: (0..links).map(|l| a.link_power(l)).collect(),
        next_q: next.qsi.lengths.iter().map(|q| q.round() as usize).collect(),
    }
}

/// Offline solution of the per-link fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPotential {
    pub values: Vec<f64>,
    pub theta: f64,
    pub sweeps: usize,
}

/// Solves the fixed point that the representative-state updates converge to.
///
/// At a representative state every other link is empty and bids nothing, so
/// link `l` owns all subcarriers; the fixed point is single-link relative
/// value iteration over `(c, q)` with reference `(0, 0)`, where the per-slot
/// minimization is the water-filling rule itself.
pub fn solve_link_potential(cfg: &MdpConfig, l: usize, tol: f64, max_sweeps: usize) -> Result<LinkPotential> {
    cfg.validate()?;
    let joint = cfg.joint();
    let kc = joint.size();
    let nq = cfg.buffer + 1;
    let model = &cfg.channel;
    let lam = cfg.arrival_prob[l];
    let coeff = cfg.service_scale[l] / std::f64::consts::LN_2;
    let gamma = cfg.weights.gamma[l];
    let peak = cfg.peak_power();
    let cost = LocalCost::from_config(cfg);
    let gains: Vec<Vec<f64>> = (0..kc)
        .map(|c| (0..joint.m).map(|m| model.level(joint.digit(c, m))).collect())
        .collect();

    let mut v = vec![0.0; kc * nq];
    let mut history = Vec::new();
    for sweep in 1..=max_sweeps {
        // ev[q][c] = E[v(H', q) | c]
        let ev: Vec<Vec<f64>> = (0..nq)
            .map(|q| joint.expect_all(model, &(0..kc).map(|c| v[c * nq + q]).collect::<Vec<_>>()))
            .collect();
        let mut tv = vec![0.0; kc * nq];
        for c in 0..kc {
            for q in 0..nq {
                let mut val = cost.of(l, q, 0.0) + ev[q][c];
                if q < cfg.buffer {
                    val += lam * (ev[q + 1][c] - ev[q][c]);
                }
                if q > 0 {
                    let bid = LinkBid::new(coeff * (ev[q][c] - ev[q - 1][c]), gamma);
                    // min over power of gamma p - coeff * delta * ln(1 + g p)
                    val -= gains[c].iter().map(|&g| bid.evaluate(g, peak).1).sum::<f64>();
                }
                tv[c * nq + q] = val;
            }
        }
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for (a, b) in tv.iter().zip(&v) {
            hi = hi.max(a - b);
            lo = lo.min(a - b);
        }
        history.push(hi - lo);
        let offset = tv[0];
        v = tv.iter().map(|x| x - offset).collect();
        if hi - lo < tol {
            return Ok(LinkPotential { values: v, theta: 0.5 * (hi + lo), sweeps: sweep });
        }
    }
    let residual = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::NotConverged { iterations: max_sweeps, residual, history })
}

/// Potential table holding the offline solution for every link.
pub fn solve_potentials(cfg: &MdpConfig, tol: f64, max_sweeps: usize) -> Result<PotentialTable> {
    let mut tbl = PotentialTable::new(cfg.links, cfg.joint(), cfg.buffer);
    let w = &cfg.weights;
    let key = |l: usize| [cfg.arrival_prob[l], cfg.service_scale[l], w.nu[l], w.eta[l], w.gamma[l]];
    for l in 0..cfg.links {
        // Links with identical parameters share one solution.
        tbl.values[l] = match (0..l).find(|&j| key(j) == key(l)) {
            Some(j) => tbl.values[j].clone(),
            None => solve_link_potential(cfg, l, tol, max_sweeps)?.values,
        };
    }
    Ok(tbl)
}
