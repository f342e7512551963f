//! Per-link, per-subcarrier Q-factors `q~_l(h, q, s)` and their learner.
//!
//! Link `l`'s potential is approximated by a sum over subcarriers of
//! `nu(h, q)`, the Q-factor averaged over whether the link wins the
//! subcarrier: it wins when its gain is at least the best of the other
//! `L - 1` links.

use serde::{Deserialize, Serialize};

use super::instance::MdpConfig;
use super::potential::LocalCost;
use super::step::StepSize;
use crate::alloc::LinkBid;
use crate::channel::{stationary_dist, ChannelModel};
use crate::error::{Error, Result};
use crate::model::{Action, SystemState};

/// Law of the largest of `n` i.i.d. draws from `pi` over `levels`, as a pmf
/// over grid indices. Equal levels put their mass on the first index.
pub fn max_order_pmf(levels: &[f64], pi: &[f64], n: usize) -> Result<Vec<f64>> {
    if levels.len() != pi.len() || levels.is_empty() {
        return Err(Error::Dimension("levels and stationary law differ in length".into()));
    }
    if n == 0 {
        return Err(Error::Contract("the maximum of zero draws has no law".into()));
    }
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]).then(a.cmp(&b)));
    let mut pmf = vec![0.0; levels.len()];
    let mut below = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let head = order[i];
        let mut mass = 0.0;
        while i < order.len() && levels[order[i]] == levels[head] {
            mass += pi[order[i]];
            i += 1;
        }
        let upto = (below + mass).min(1.0);
        pmf[head] = upto.powi(n as i32) - below.powi(n as i32);
        below = upto;
    }
    Ok(pmf)
}

/// Which quantity links bid on a subcarrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BidRule {
    /// Smallest `q~(h, q, 1)` wins.
    Occupied,
    /// Smallest `q~(h, q, 1) - q~(h, q, 0)` wins, idling when all are positive.
    #[default]
    Difference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFactorTable {
    pub levels: usize,
    pub buffer: usize,
    /// `values[l][(h * (buffer + 1) + q) * 2 + s]`; cell `(0, 0, 0)` is the
    /// reference.
    pub values: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
    /// Law of the best competing gain index, `None` for a single link.
    pub hstar: Option<Vec<f64>>,
    /// `P(H >= H*)` per own level.
    pub win_prob: Vec<f64>,
}

impl QFactorTable {
    pub fn new(links: usize, model: &ChannelModel, buffer: usize) -> Result<Self> {
        let k = model.n_states();
        let (hstar, win_prob) = if links > 1 {
            let pi = stationary_dist(model)?;
            let pmf = max_order_pmf(model.levels(), &pi, links - 1)?;
            let win = (0..k)
                .map(|h| (0..k).filter(|&j| model.level(j) <= model.level(h)).map(|j| pmf[j]).sum())
                .collect();
            (Some(pmf), win)
        } else {
            (None, vec![1.0; k])
        };
        let n = k * (buffer + 1) * 2;
        Ok(Self {
            levels: k,
            buffer,
            values: vec![vec![0.0; n]; links],
            counts: vec![vec![0; n]; links],
            hstar,
            win_prob,
        })
    }

    /// Every cell `slope_l * q`, both for `s = 0` and `s = 1`.
    pub fn seeded(links: usize, model: &ChannelModel, buffer: usize, slopes: &[f64]) -> Result<Self> {
        let mut t = Self::new(links, model, buffer)?;
        for l in 0..links {
            for h in 0..t.levels {
                for q in 0..=buffer {
                    for s in 0..2 {
                        let i = t.index(h, q, s == 1);
                        t.values[l][i] = slopes[l] * q as f64;
                    }
                }
            }
        }
        Ok(t)
    }

    pub fn links(&self) -> usize {
        self.values.len()
    }

    pub fn index(&self, h: usize, q: usize, s: bool) -> usize {
        (h * (self.buffer + 1) + q) * 2 + s as usize
    }

    pub fn value(&self, l: usize, h: usize, q: usize, s: bool) -> f64 {
        self.values[l][self.index(h, q, s)]
    }

    pub fn reference_is_zero(&self) -> bool {
        self.values.iter().all(|v| v[0] == 0.0)
    }

    /// `nu(h, q)`: the Q-factor averaged over the winning indicator. An
    /// empty queue never bids, so only `s = 0` applies there.
    pub fn nu(&self, l: usize, h: usize, q: usize) -> f64 {
        if q == 0 {
            return self.value(l, h, 0, false);
        }
        let w = self.win_prob[h];
        w * self.value(l, h, q, true) + (1.0 - w) * self.value(l, h, q, false)
    }

    /// `E[nu(H', q) | H = h]`.
    pub fn nu_bar(&self, l: usize, model: &ChannelModel, h: usize, q: usize) -> f64 {
        model.row(h).iter().enumerate().map(|(j, p)| p * self.nu(l, j, q)).sum()
    }

    /// `nu_bar(h, q) - nu_bar(h, q - 1)`, zero at `q = 0`.
    pub fn delta_nu_bar(&self, l: usize, model: &ChannelModel, h: usize, q: usize) -> f64 {
        if q == 0 {
            return 0.0;
        }
        self.nu_bar(l, model, h, q) - self.nu_bar(l, model, h, q - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QPolicyParams {
    pub rate_coeff: Vec<f64>,
    pub gamma: Vec<f64>,
    pub peak: f64,
    pub rule: BidRule,
}

impl QPolicyParams {
    pub fn from_config(cfg: &MdpConfig, rule: BidRule) -> Self {
        Self {
            rate_coeff: cfg.service_scale.iter().map(|s| s / std::f64::consts::LN_2).collect(),
            gamma: cfg.weights.gamma.clone(),
            peak: cfg.peak_power(),
            rule,
        }
    }
}

/// Assigns each subcarrier by the bid rule among links with packets (ties to
/// the lowest index) and powers the winner by water-filling with weight
/// `rate_coeff * sum_m dnu_bar(H_{l,m}, Q_l)` and price `gamma`.
pub fn approx_q_action(chi: &SystemState, model: &ChannelModel, tbl: &QFactorTable, params: &QPolicyParams) -> Result<Action> {
    let links = chi.qsi.len();
    let subs = chi.csi.subcarriers();
    if tbl.links() != links || params.rate_coeff.len() != links || params.gamma.len() != links {
        return Err(Error::Dimension("Q-factor table, parameters and state disagree on link count".into()));
    }
    let q: Vec<usize> = chi.qsi.lengths.iter().map(|x| x.round() as usize).collect();
    let bids: Vec<LinkBid> = (0..links)
        .map(|l| {
            let d: f64 = (0..subs).map(|m| tbl.delta_nu_bar(l, model, chi.csi.index(l, m), q[l])).sum();
            LinkBid::new(params.rate_coeff[l] * d, params.gamma[l])
        })
        .collect();
    let mut a = Action::idle(links, subs);
    for m in 0..subs {
        let mut best: Option<(usize, f64)> = None;
        for l in (0..links).filter(|&l| q[l] > 0) {
            let h = chi.csi.index(l, m);
            let score = match params.rule {
                BidRule::Occupied => tbl.value(l, h, q[l], true),
                BidRule::Difference => tbl.value(l, h, q[l], true) - tbl.value(l, h, q[l], false),
            };
            if params.rule == BidRule::Difference && score > 0.0 {
                continue;
            }
            if best.map_or(true, |(_, b)| score < b) {
                best = Some((l, score));
            }
        }
        if let Some((l, _)) = best {
            let (p, _) = bids[l].evaluate(chi.csi.gain(model, l, m), params.peak);
            a.assign(m, l, p)?;
        }
    }
    Ok(a)
}

/// One slot of one link: per-subcarrier levels, queue, winning indicators
/// and powers at `t`, and the queue at `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QObservation {
    pub h: Vec<usize>,
    pub q: usize,
    pub s: Vec<bool>,
    pub p: Vec<f64>,
    pub next_q: usize,
}

/// Levels and next queue at the link's latest slot holding the reference
/// cell on some subcarrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QRefCache {
    pub h: Vec<usize>,
    pub next_q: usize,
}

impl QRefCache {
    pub fn holds_reference(obs: &QObservation) -> bool {
        obs.q == 0 && obs.h.iter().zip(&obs.s).any(|(&h, &s)| h == 0 && !s)
    }
}

fn continuation(tbl: &QFactorTable, model: &ChannelModel, l: usize, h: &[usize], next_q: usize) -> f64 {
    h.iter().map(|&hm| tbl.nu_bar(l, model, hm, next_q)).sum::<f64>() / h.len() as f64
}

/// Updates every distinct non-reference cell seen on the link's
/// subcarriers this slot, once each. Returns the largest absolute change.
///
/// Target: the per-subcarrier share of the queue and drop cost, the
/// cell's average power cost, and the per-subcarrier mean of
/// `nu_bar(H_m(t), Q(t+1))`, minus the same continuation at the cached
/// reference slot.
pub fn learn_q_update(
    tbl: &mut QFactorTable,
    model: &ChannelModel,
    cost: &LocalCost,
    l: usize,
    obs: &QObservation,
    cache: &QRefCache,
    step: &StepSize,
) -> Result<f64> {
    let nf = obs.h.len();
    if nf == 0 || obs.s.len() != nf || obs.p.len() != nf {
        return Err(Error::Dimension("observation vectors differ in length".into()));
    }
    let queue_share = cost.of(l, obs.q, 0.0) / nf as f64;
    let here = continuation(tbl, model, l, &obs.h, obs.next_q);
    let there = cost.reference_average(l, cache.next_q, |q| continuation(tbl, model, l, &cache.h, q));
    let mut cells: Vec<(usize, f64, usize)> = Vec::new();
    for m in 0..nf {
        let idx = tbl.index(obs.h[m], obs.q, obs.s[m]);
        if idx == 0 {
            continue;
        }
        match cells.iter_mut().find(|c| c.0 == idx) {
            Some(c) => {
                c.1 += obs.p[m];
                c.2 += 1;
            }
            None => cells.push((idx, obs.p[m], 1)),
        }
    }
    let mut change = 0.0f64;
    for (idx, psum, n) in cells {
        let target = queue_share + cost.gamma[l] * psum / n as f64 + here - there;
        tbl.counts[l][idx] += 1;
        let eps = step.at(tbl.counts[l][idx]);
        let old = tbl.values[l][idx];
        tbl.values[l][idx] = old + eps * (target - old);
        change = change.max((tbl.values[l][idx] - old).abs());
    }
    Ok(change)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFactorLearner {
    pub table: QFactorTable,
    pub step: StepSize,
    pub cost: LocalCost,
    pub caches: Vec<Option<QRefCache>>,
    pub last_change: f64,
    pub updates: u64,
}

impl QFactorLearner {
    pub fn new(cfg: &MdpConfig, step: StepSize) -> Result<Self> {
        let slopes: Vec<f64> = super::potential::default_slopes(cfg)
            .iter()
            .map(|k| k / cfg.subcarriers as f64)
            .collect();
        let table = QFactorTable::seeded(cfg.links, &cfg.channel, cfg.buffer, &slopes)?;
        Ok(Self::with_table(cfg, step, table))
    }

    pub fn with_table(cfg: &MdpConfig, step: StepSize, table: QFactorTable) -> Self {
        Self {
            table,
            step,
            cost: LocalCost::from_config(cfg),
            caches: vec![None; cfg.links],
            last_change: 0.0,
            updates: 0,
        }
    }

    /// Refreshes reference caches without touching the tables.
    pub fn refresh(&mut self, obs: &[QObservation]) {
        for (l, o) in obs.iter().enumerate() {
            if QRefCache::holds_reference(o) {
                self.caches[l] = Some(QRefCache { h: o.h.clone(), next_q: o.next_q });
            }
        }
    }

    /// Feeds one slot, one observation per link.
    pub fn observe(&mut self, model: &ChannelModel, obs: &[QObservation]) -> Result<f64> {
        if obs.len() != self.table.links() {
            return Err(Error::Dimension(format!("{} observations for {} links", obs.len(), self.table.links())));
        }
        self.last_change = 0.0;
        self.refresh(obs);
        for (l, o) in obs.iter().enumerate() {
            if let Some(cache) = &self.caches[l] {
                let c = learn_q_update(&mut self.table, model, &self.cost, l, o, cache, &self.step)?;
                self.last_change = self.last_change.max(c);
                self.updates += 1;
            }
        }
        Ok(self.last_change)
    }
}

/// Per-link observations from two consecutive system states.
pub fn q_observations(chi: &SystemState, a: &Action, next: &SystemState) -> Vec<QObservation> {
    let subs = chi.csi.subcarriers();
    (0..chi.qsi.len())
        .map(|l| QObservation {
            h: (0..subs).map(|m| chi.csi.index(l, m)).collect(),
            q: chi.qsi.lengths[l].round() as usize,
            s: (0..subs).map(|m| a.s(l, m)).collect(),
            p: (0..subs).map(|m| a.p(l, m)).collect(),
            next_q: next.qsi.lengths[l].round() as usize,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelState;
    use crate::model::QueueState;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn model() -> ChannelModel {
        ChannelModel::new(vec![0.5, 2.0], vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap()
    }

    fn cost() -> LocalCost {
        LocalCost {
            nu: vec![1.0, 1.0],
            eta: vec![5.0, 5.0],
            gamma: vec![0.3, 0.3],
            buffer: 3,
            arrival_prob: vec![0.1, 0.1],
            reference: Default::default(),
        }
    }

    fn state(q: Vec<f64>, idx: Vec<usize>, subs: usize) -> SystemState {
        let n = q.len();
        SystemState::new(
            ChannelState::from_indices(n, subs, idx, &model()).unwrap(),
            QueueState::from_lengths(q, 3.0).unwrap(),
        )
        .unwrap()
    }

    fn params(rule: BidRule) -> QPolicyParams {
        QPolicyParams { rate_coeff: vec![0.3, 0.3], gamma: vec![0.3, 0.3], peak: 2.0, rule }
    }

    #[test]
    fn order_statistic_by_enumeration() {
        let levels = [0.2, 1.0, 3.0];
        let pi = [0.5, 0.3, 0.2];
        let pmf = max_order_pmf(&levels, &pi, 3).unwrap();
        let mut brute = [0.0; 3];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    brute[a.max(b).max(c)] += pi[a] * pi[b] * pi[c];
                }
            }
        }
        for i in 0..3 {
            assert_abs_diff_eq!(pmf[i], brute[i], epsilon = 1e-14);
        }
        assert_abs_diff_eq!(pmf.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn order_statistic_sums_to_one(
            w in proptest::collection::vec(0.01f64..1.0, 1..6),
            n in 1usize..6,
        ) {
            let total: f64 = w.iter().sum();
            let pi: Vec<f64> = w.iter().map(|x| x / total).collect();
            let levels: Vec<f64> = (0..pi.len()).map(|i| ((i * 7) % 5) as f64).collect();
            let pmf = max_order_pmf(&levels, &pi, n).unwrap();
            prop_assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(pmf.iter().all(|p| *p >= -1e-15));
        }
    }

    #[test]
    fn identical_tables_favor_link_zero() {
        let t = QFactorTable::seeded(2, &model(), 3, &[1.0, 1.0]).unwrap();
        let chi = state(vec![2.0, 2.0], vec![1, 0, 1, 0], 2);
        for rule in [BidRule::Occupied, BidRule::Difference] {
            let a = approx_q_action(&chi, &model(), &t, &params(rule)).unwrap();
            assert_eq!(a.owner(0), Some(0));
            assert_eq!(a.owner(1), Some(0));
        }
    }

    #[test]
    fn nonpositive_differential_gives_zero_power() {
        let t = QFactorTable::new(2, &model(), 3).unwrap();
        let chi = state(vec![2.0, 1.0], vec![1, 1], 1);
        let a = approx_q_action(&chi, &model(), &t, &params(BidRule::Occupied)).unwrap();
        assert_eq!(a.total_power(), 0.0);
    }

    #[test]
    fn hand_built_winners() {
        let mut t = QFactorTable::new(2, &model(), 3).unwrap();
        // Link 0 cheaper to serve on level 1, link 1 on level 0.
        let (a1, a0) = (t.index(1, 2, true), t.index(0, 2, true));
        t.values[0][a1] = 1.0;
        t.values[1][a1] = 4.0;
        t.values[0][a0] = 6.0;
        t.values[1][a0] = 2.0;
        let chi = state(vec![2.0, 2.0], vec![1, 0, 1, 0], 2);
        let a = approx_q_action(&chi, &model(), &t, &params(BidRule::Occupied)).unwrap();
        assert_eq!(a.owner(0), Some(0));
        assert_eq!(a.owner(1), Some(1));
    }

    #[test]
    fn empty_queues_never_bid() {
        let t = QFactorTable::seeded(2, &model(), 3, &[1.0, 1.0]).unwrap();
        let chi = state(vec![0.0, 3.0], vec![1, 1], 1);
        let a = approx_q_action(&chi, &model(), &t, &params(BidRule::Difference)).unwrap();
        assert_eq!(a.owner(0), Some(1));
    }

    fn obs() -> QObservation {
        QObservation { h: vec![1, 0], q: 2, s: vec![true, false], p: vec![0.8, 0.0], next_q: 1 }
    }

    #[test]
    fn unit_step_sets_observed_value() {
        let mut t = QFactorTable::seeded(2, &model(), 3, &[0.7, 0.7]).unwrap();
        let cache = QRefCache { h: vec![0, 1], next_q: 1 };
        let c = cost();
        let m = model();
        let cont = |t: &QFactorTable, h: &[usize], nq: usize| -> f64 {
            h.iter().map(|&x| t.nu_bar(0, &m, x, nq)).sum::<f64>() / 2.0
        };
        // Averaged reference: cached Q' = 1 is replaced by the arrival mix.
        let rel = cont(&t, &[1, 0], 1) - (0.9 * cont(&t, &[0, 1], 0) + 0.1 * cont(&t, &[0, 1], 1));
        let occupied = 2.0 / 2.0 + 0.3 * 0.8 + rel;
        let idle = 2.0 / 2.0 + rel;
        learn_q_update(&mut t, &m, &c, 0, &obs(), &cache, &StepSize::new(1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(t.value(0, 1, 2, true), occupied, epsilon = 1e-12);
        assert_abs_diff_eq!(t.value(0, 0, 2, false), idle, epsilon = 1e-12);
    }

    #[test]
    fn fixed_point_gives_zero_change() {
        let mut t = QFactorTable::new(2, &model(), 3).unwrap();
        let o = QObservation { h: vec![1], q: 0, s: vec![false], p: vec![0.0], next_q: 0 };
        let cache = QRefCache { h: vec![0], next_q: 0 };
        let d = learn_q_update(&mut t, &model(), &cost(), 0, &o, &cache, &StepSize::default()).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn reference_cell_stays_zero() {
        use rand::{Rng, SeedableRng};
        let cfg = MdpConfig {
            links: 2,
            subcarriers: 2,
            channel: model(),
            buffer: 3,
            arrival_prob: vec![0.1; 2],
            service_scale: vec![0.1; 2],
            power_levels: vec![1.0, 2.0],
            weights: crate::model::CostWeights::uniform(2, 1.0, 5.0, 0.3),
        };
        let mut learner = QFactorLearner::with_table(
            &cfg,
            StepSize::default(),
            QFactorTable::seeded(2, &model(), 3, &[1.0, 1.0]).unwrap(),
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            let o: Vec<QObservation> = (0..2)
                .map(|_| {
                    let q = rng.gen_range(0..=3);
                    let s: Vec<bool> = (0..2).map(|_| q > 0 && rng.gen_bool(0.5)).collect();
                    QObservation {
                        h: (0..2).map(|_| rng.gen_range(0..2)).collect(),
                        q,
                        p: s.iter().map(|&x| if x { rng.gen_range(0.0..2.0) } else { 0.0 }).collect(),
                        s,
                        next_q: rng.gen_range(0..=3),
                    }
                })
                .collect();
            learner.observe(&model(), &o).unwrap();
            assert!(learner.table.reference_is_zero());
        }
        assert!(learner.updates > 0);
    }
}
