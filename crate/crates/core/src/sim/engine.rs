//! Slot loop for both scenario modes.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scenario::{PolicySpec, Scenario, SingleHop};
use crate::alloc::{allocate, link_bits, LinkBid};
use crate::channel::{channel_next, ChannelModel, ChannelState};
use crate::error::{Error, Result};
use crate::lyapunov::{allocate_eeca, allocate_mlwdf};
use crate::mdp::instance::JointChannel;
use crate::mdp::learn::explore_action;
use crate::mdp::potential::{observation, solve_potentials, VPolicyParams};
use crate::mdp::{approx_v_action, MdpConfig, PotentialLearner, PotentialTable, StepSize};
use crate::model::{stage_cost_raw, Action, Discipline, MetricsAccumulator, MetricsReport, QueueState, QueueUnit, SystemState};
use crate::rate_constraint::{allocate_rate_constraint, RatePolicyParams};
use crate::routing::{RoutingReport, RoutingSim};

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Channel = 1,
    Arrivals = 2,
    Sizes = 3,
    Links = 4,
    Policy = 5,
}

pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(purpose as u64);
    r
}

/// SHA-256 of the scenario with its seed cleared, as 16 hex digits.
pub fn scenario_hash(s: &Scenario) -> String {
    let mut c = s.clone();
    c.seed = 0;
    let json = serde_json::to_string(&c).expect("scenario serializes");
    hex::encode(&Sha256::digest(json.as_bytes())[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRow {
    pub slot: u64,
    pub norm: f64,
    /// Link 0 potentials at channel index 0 for `q = 1..=N_Q`.
    pub entries: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario_hash: String,
    pub seed: u64,
    pub policy: String,
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing: Option<RoutingReport>,
    /// Start-of-slot queue vectors over the measured slots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_trace: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_trace: Option<Vec<LearningRow>>,
    /// Policy multipliers the run used.
    pub multipliers: BTreeMap<String, f64>,
    #[serde(skip)]
    pub wall_ms: u64,
}

pub fn run(s: &Scenario) -> Result<RunResult> {
    s.validate()?;
    let start = Instant::now();
    let mut r = match (&s.single_hop, &s.multi_hop) {
        (Some(h), _) => run_single_hop(s, h)?,
        (_, Some(m)) => {
            let mut sim = RoutingSim::new(m.topology.build()?, m.variant, m.buffer)?;
            let rep = sim.run(s.horizon, s.warmup, &mut stream(s.seed, Stream::Arrivals), &mut stream(s.seed, Stream::Links))?;
            let mut mult = BTreeMap::new();
            if let Ok(serde_json::Value::Object(o)) = serde_json::to_value(m.variant) {
                for (k, v) in o {
                    if let Some(x) = v.as_f64() {
                        mult.insert(k, x);
                    }
                }
            }
            RunResult {
                scenario_hash: String::new(),
                seed: s.seed,
                policy: String::new(),
                metrics: routing_metrics(&rep)?,
                routing: Some(rep),
                queue_trace: None,
                learning_trace: None,
                multipliers: mult,
                wall_ms: 0,
            }
        }
        _ => unreachable!("validated"),
    };
    r.scenario_hash = scenario_hash(s);
    r.policy = s.policy_name();
    r.wall_ms = start.elapsed().as_millis() as u64;
    Ok(r)
}

fn routing_metrics(rep: &RoutingReport) -> Result<MetricsReport> {
    if rep.slots == 0 {
        return Err(Error::EmptyAccumulator);
    }
    let t = rep.slots as f64;
    let lambda_bar_total = rep.generated as f64 / t;
    let d_bar = if rep.generated > 0 { rep.dropped as f64 / rep.generated as f64 } else { 0.0 };
    Ok(MetricsReport {
        unit: QueueUnit::Packet,
        slots: rep.slots,
        q_bar: rep.node_backlog.clone(),
        q_bar_total: rep.mean_backlog,
        d_bar,
        d_bar_arrivals: d_bar,
        d_bar_full_slots: 0.0,
        lambda_bar: vec![lambda_bar_total],
        lambda_bar_total,
        p_bar: Vec::new(),
        p_bar_mean: 0.0,
        t_bar: vec![rep.delivered as f64 / t],
        t_bar_total: rep.delivered as f64 / t,
        avg_cost: rep.mean_backlog,
        delay_littles: crate::model::littles_delay(rep.mean_backlog, d_bar, lambda_bar_total).ok(),
        delay_timestamped: (rep.delivered > 0).then_some(rep.mean_delay),
        delivered: rep.delivered,
    })
}

/// Per-link potential differentials `E[V(H', q) - V(H', q - 1) | c]`,
/// precomputed so the per-slot rule is a table lookup.
struct DeltaTable {
    joint: JointChannel,
    stride: usize,
    deltas: Vec<Vec<f64>>,
}

impl DeltaTable {
    fn new(tbl: &PotentialTable, model: &ChannelModel) -> Self {
        let joint = tbl.joint;
        let stride = tbl.buffer + 1;
        let kc = joint.size();
        let deltas = tbl
            .values
            .iter()
            .map(|v| {
                let ev: Vec<Vec<f64>> = (0..stride).map(|q| joint.expect_all(model, &(0..kc).map(|c| v[c * stride + q]).collect::<Vec<_>>())).collect();
                let mut d = vec![0.0; kc * stride];
                for c in 0..kc {
                    for q in 1..stride {
                        d[c * stride + q] = ev[q][c] - ev[q - 1][c];
                    }
                }
                d
            })
            .collect();
        Self { joint, stride, deltas }
    }

    fn delta(&self, l: usize, csi: &ChannelState, q: usize) -> f64 {
        let c = self.joint.encode((0..self.joint.m).map(|m| csi.index(l, m)));
        self.deltas[l][c * self.stride + q.min(self.stride - 1)]
    }
}

enum Controller {
    Rate(RatePolicyParams),
    Mlwdf(Vec<f64>),
    Eeca(f64),
    Potential { table: DeltaTable, params: VPolicyParams },
    Learned { cfg: MdpConfig, learner: Box<PotentialLearner>, params: VPolicyParams, explore: f64, trace_every: u64 },
    Fixed(f64),
}

fn controller(h: &SingleHop, model: &ChannelModel) -> Result<Controller> {
    let n = h.links;
    Ok(match h.policy {
        PolicySpec::RateConstraint { nu, gamma } => Controller::Rate(RatePolicyParams::new(vec![nu; n], vec![gamma; n], vec![0.0; n])?),
        PolicySpec::Mlwdf { gamma } => Controller::Mlwdf(vec![gamma; n]),
        PolicySpec::Eeca { v } => Controller::Eeca(v),
        PolicySpec::ApproxMdp { .. } => {
            let cfg = h.mdp_config()?;
            let tbl = solve_potentials(&cfg, 1e-7, 1_000_000)?;
            Controller::Potential { table: DeltaTable::new(&tbl, model), params: VPolicyParams::from_config(&cfg) }
        }
        PolicySpec::LearnedPotential { step_exponent, explore, trace_every, .. } => {
            let cfg = h.mdp_config()?;
            let learner = PotentialLearner::new(&cfg, StepSize::new(step_exponent)?);
            let params = VPolicyParams::from_config(&cfg);
            Controller::Learned { cfg, learner: Box::new(learner), params, explore, trace_every }
        }
        PolicySpec::Fixed { power } => Controller::Fixed(power),
    })
}

fn is_reference(chi: &SystemState) -> bool {
    chi.qsi.lengths.iter().all(|&q| q == 0.0) && chi.csi.indices().iter().all(|&i| i == 0)
}

impl Controller {
    fn act<R: Rng + ?Sized>(&self, chi: &SystemState, model: &ChannelModel, peak: f64, rng: &mut R) -> Result<(Action, bool)> {
        let a = match self {
            Controller::Rate(p) => allocate_rate_constraint(&chi.csi, model, p, peak)?,
            Controller::Mlwdf(g) => allocate_mlwdf(chi, model, g, peak)?,
            Controller::Eeca(v) => allocate_eeca(chi, model, *v, peak)?,
            Controller::Potential { table, params } => {
                let bids: Vec<LinkBid> = (0..chi.qsi.len())
                    .map(|l| {
                        let q = chi.qsi.lengths[l] as usize;
                        let w = if q == 0 { 0.0 } else { params.rate_coeff[l] * table.delta(l, &chi.csi, q) };
                        LinkBid::new(w, params.gamma[l])
                    })
                    .collect();
                allocate(&chi.csi, model, &bids, params.peak)?
            }
            Controller::Learned { cfg, learner, params, explore, .. } => {
                if rng.gen_bool(*explore) {
                    return Ok((explore_action(cfg, chi, rng)?, true));
                }
                approx_v_action(chi, model, &learner.table, params)?
            }
            Controller::Fixed(p) => {
                let mut a = Action::idle(chi.qsi.len(), chi.csi.subcarriers());
                let longest = (0..chi.qsi.len()).filter(|&l| chi.qsi.lengths[l] > 0.0).fold(None, |b: Option<usize>, l| match b {
                    Some(x) if chi.qsi.lengths[x] >= chi.qsi.lengths[l] => Some(x),
                    _ => Some(l),
                });
                if let Some(l) = longest {
                    for m in 0..a.subcarriers() {
                        a.assign(m, l, *p)?;
                    }
                }
                a
            }
        };
        Ok((a, false))
    }

    fn multipliers(spec: &PolicySpec) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        match *spec {
            PolicySpec::RateConstraint { nu, gamma } => {
                m.insert("nu".into(), nu);
                m.insert("gamma".into(), gamma);
            }
            PolicySpec::Mlwdf { gamma } => {
                m.insert("gamma".into(), gamma);
            }
            PolicySpec::Eeca { v } => {
                m.insert("v".into(), v);
            }
            PolicySpec::ApproxMdp { nu, eta, gamma } | PolicySpec::LearnedPotential { nu, eta, gamma, .. } => {
                m.insert("nu".into(), nu);
                m.insert("eta".into(), eta);
                m.insert("gamma".into(), gamma);
            }
            PolicySpec::Fixed { power } => {
                m.insert("power".into(), power);
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    arrived: u64,
    remaining: f64,
}

fn run_single_hop(s: &Scenario, h: &SingleHop) -> Result<RunResult> {
    let model = h.channel_model()?;
    let traffic = h.traffic()?;
    let unit = h.unit();
    let (n, nf) = (h.links, h.subbands);
    let peak = h.peak_power();
    let bpu = h.bits_per_unit();
    let weights = h.cost_weights();
    let mut ctl = controller(h, &model)?;

    let mut chan_rng = stream(s.seed, Stream::Channel);
    let mut arr_rng = stream(s.seed, Stream::Arrivals);
    let mut size_rng = stream(s.seed, Stream::Sizes);
    let mut pol_rng = stream(s.seed, Stream::Policy);

    let mut csi = ChannelState::stationary(&model, n, nf, &mut chan_rng)?;
    let mut fluid = QueueState::new(n, h.buffer)?.with_discipline(h.discipline);
    let mut packets: Vec<VecDeque<InFlight>> = vec![VecDeque::new(); n];
    let mut acc = MetricsAccumulator::new(unit, n, n);
    let mut qtrace = s.trace_queues.then(Vec::new);
    let mut ltrace = matches!(ctl, Controller::Learned { trace_every, .. } if trace_every > 0).then(Vec::new);

    let lengths = |fluid: &QueueState, packets: &[VecDeque<InFlight>]| -> Vec<f64> {
        match unit {
            QueueUnit::Fluid => fluid.lengths.clone(),
            QueueUnit::Packet => packets.iter().map(|p| p.len() as f64).collect(),
        }
    };

    for t in 0..s.horizon {
        let measured = t >= s.warmup;
        let q = QueueState::from_lengths(lengths(&fluid, &packets), h.buffer)?;
        let chi = SystemState::new(csi.clone(), q)?;
        let (action, explored) = ctl.act(&chi, &model, peak, &mut pol_rng)?;
        let bits = link_bits(&action, &csi, &model, bpu);
        let power: Vec<f64> = (0..n).map(|l| action.link_power(l)).collect();

        let mut throughput = vec![0.0; n];
        let mut offered = vec![0.0; n];
        let mut dropped = vec![0.0; n];
        match unit {
            QueueUnit::Fluid => {
                let arrivals: Vec<f64> = (0..n).map(|_| traffic.sample(&mut arr_rng, &mut size_rng).unwrap_or(0.0)).collect();
                for l in 0..n {
                    throughput[l] = bits[l].min(fluid.lengths[l]);
                }
                let (next, drop) = fluid.step(&bits, &arrivals)?;
                fluid = next;
                offered = arrivals;
                dropped = drop;
            }
            QueueUnit::Packet => {
                for l in 0..n {
                    let head = match h.discipline {
                        Discipline::Fifo => packets[l].front_mut(),
                        Discipline::Lifo => packets[l].back_mut(),
                    };
                    if let Some(p) = head {
                        p.remaining -= bits[l];
                        if p.remaining <= 0.0 {
                            let p = match h.discipline {
                                Discipline::Fifo => packets[l].pop_front(),
                                Discipline::Lifo => packets[l].pop_back(),
                            }
                            .expect("head exists");
                            throughput[l] = 1.0;
                            if measured && p.arrived >= s.warmup {
                                acc.record_delivery((t - p.arrived) as f64);
                            }
                        }
                    }
                }
                for l in 0..n {
                    if let Some(size) = traffic.sample(&mut arr_rng, &mut size_rng) {
                        offered[l] = 1.0;
                        if (packets[l].len() as f64) < h.buffer {
                            packets[l].push_back(InFlight { arrived: t, remaining: size });
                        } else {
                            dropped[l] = 1.0;
                        }
                    }
                }
            }
        }

        if measured {
            let cost = stage_cost_raw(&chi.qsi.lengths, h.buffer, &power, &weights)?;
            acc.record_slot(&chi.qsi, &power, &throughput, cost);
            for l in 0..n {
                if offered[l] > 0.0 {
                    acc.record_arrival(l, offered[l], dropped[l]);
                }
            }
            if let Some(tr) = qtrace.as_mut() {
                tr.push(chi.qsi.lengths.clone());
            }
        }

        let next_csi = channel_next(&model, &csi, &mut chan_rng);
        if let Controller::Learned { cfg, learner, trace_every, .. } = &mut ctl {
            if !explored || is_reference(&chi) {
                let next = SystemState::new(next_csi.clone(), QueueState::from_lengths(lengths(&fluid, &packets), h.buffer)?)?;
                learner.observe(&model, &observation(&cfg.joint(), &chi, &action, &next))?;
            }
            if let Some(tr) = ltrace.as_mut() {
                if (t + 1) % *trace_every == 0 {
                    let tbl = &learner.table;
                    tr.push(LearningRow {
                        slot: t + 1,
                        norm: tbl.values.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs())),
                        entries: (1..=tbl.buffer).map(|q| tbl.value(0, 0, q)).collect(),
                    });
                }
            }
        }
        csi = next_csi;
    }

    Ok(RunResult {
        scenario_hash: String::new(),
        seed: s.seed,
        policy: String::new(),
        metrics: acc.finalize()?,
        routing: None,
        queue_trace: qtrace,
        learning_trace: ltrace,
        multipliers: Controller::multipliers(&h.policy),
        wall_ms: 0,
    })
}
