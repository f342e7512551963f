//! Scenario configuration: TOML schema, validation and derived models.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelModel;
use crate::error::{Error, Result};
use crate::mdp::MdpConfig;
use crate::model::{CostWeights, Discipline, QueueUnit};
use crate::routing::{Commodity, Link, MultihopNetwork, RoutingVariant};
use crate::traffic::TrafficModel;

pub const SCHEMA_VERSION: u32 = 1;

/// One experiment: either a single-hop OFDMA uplink or a multi-hop network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Simulated slots, warm-up included.
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_warmup")]
    pub warmup: u64,
    /// Record per-slot queue vectors in the result.
    #[serde(default)]
    pub trace_queues: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_hop: Option<SingleHop>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi_hop: Option<MultiHop>,
}

fn default_horizon() -> u64 {
    1_000_000
}

fn default_warmup() -> u64 {
    100_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SingleHopOfdma,
    MultiHop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleHop {
    pub links: usize,
    /// Independent subband channels. Each stands for a group of subcarriers
    /// and carries `subband_bandwidth_hz` of spectrum.
    pub subbands: usize,
    /// Slot length in seconds.
    pub tau: f64,
    pub subband_bandwidth_hz: f64,
    /// `N_Q`: packets in packet mode, bits in bit mode.
    pub buffer: f64,
    /// Average transmit SNR per link; the power budget is `10^(dB/10)`.
    pub avg_snr_db: f64,
    /// Per-subband power cap as a multiple of the budget.
    #[serde(default = "default_peak_factor")]
    pub peak_factor: f64,
    #[serde(default)]
    pub discipline: Discipline,
    pub traffic: TrafficSpec,
    pub channel: ChannelSpec,
    pub policy: PolicySpec,
    /// Weights of the per-slot cost reported by every policy.
    #[serde(default)]
    pub cost: CostSpec,
}

fn default_peak_factor() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrafficSpec {
    Bit { mean_bits: f64, max_bits: f64 },
    PoissonPacket { rate_pps: f64, mean_size_bits: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    /// Equal-probability Rayleigh bins with a birth-death walk.
    Rayleigh { levels: usize, persistence: f64 },
    Explicit { levels: Vec<f64>, transition: Vec<Vec<f64>> },
    Constant { gain: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub nu: f64,
    pub eta: f64,
    pub gamma: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self { nu: 1.0, eta: 0.0, gamma: 0.0 }
    }
}

/// Policy and its multipliers, shared by every link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// CSI-only water level `(1 + nu) / gamma`.
    RateConstraint {
        #[serde(default)]
        nu: f64,
        gamma: f64,
    },
    Mlwdf { gamma: f64 },
    Eeca { v: f64 },
    /// Per-link potentials solved offline for the birth-death model.
    ApproxMdp { nu: f64, eta: f64, gamma: f64 },
    /// Per-link potentials learned online while the system runs.
    LearnedPotential {
        nu: f64,
        eta: f64,
        gamma: f64,
        #[serde(default = "default_exponent")]
        step_exponent: f64,
        #[serde(default = "default_explore")]
        explore: f64,
        /// Learning-trace period in slots; 0 disables the trace.
        #[serde(default)]
        trace_every: u64,
    },
    /// Every subband to the longest queue at a fixed power.
    Fixed { power: f64 },
}

fn default_exponent() -> f64 {
    0.85
}

fn default_explore() -> f64 {
    0.05
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::RateConstraint { .. } => "rate_constraint",
            PolicySpec::Mlwdf { .. } => "mlwdf",
            PolicySpec::Eeca { .. } => "eeca",
            PolicySpec::ApproxMdp { .. } => "approx_mdp",
            PolicySpec::LearnedPotential { .. } => "learned_potential",
            PolicySpec::Fixed { .. } => "fixed",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            PolicySpec::RateConstraint { nu, gamma } => nu >= 0.0 && gamma >= 0.0,
            PolicySpec::Mlwdf { gamma } => gamma >= 0.0,
            PolicySpec::Eeca { v } => v > 0.0,
            PolicySpec::ApproxMdp { nu, eta, gamma } => nu >= 0.0 && eta >= 0.0 && gamma > 0.0,
            PolicySpec::LearnedPotential { nu, eta, gamma, step_exponent, explore, .. } => {
                nu >= 0.0 && eta >= 0.0 && gamma > 0.0 && step_exponent > 0.5 && step_exponent <= 1.0 && (0.0..1.0).contains(&explore)
            }
            PolicySpec::Fixed { power } => power >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid {} parameters", self.name())))
        }
    }

    fn is_mdp(&self) -> bool {
        matches!(self, PolicySpec::ApproxMdp { .. } | PolicySpec::LearnedPotential { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiHop {
    pub topology: TopologySpec,
    pub variant: RoutingVariant,
    /// Per-queue packet cap; unbounded when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Tandem {
        hops: usize,
        arrival_prob: f64,
        #[serde(default)]
        bidirectional: bool,
    },
    Cyclic { nodes: usize, arrival_prob: f64 },
    Trap { dead_ends: usize, arrival_prob: f64 },
    Explicit { nodes: usize, links: Vec<Link>, commodities: Vec<Commodity> },
}

impl TopologySpec {
    pub fn build(&self) -> Result<MultihopNetwork> {
        match self {
            TopologySpec::Tandem { hops, arrival_prob, bidirectional } => MultihopNetwork::tandem(*hops, *arrival_prob, *bidirectional),
            TopologySpec::Cyclic { nodes, arrival_prob } => MultihopNetwork::cyclic(*nodes, *arrival_prob),
            TopologySpec::Trap { dead_ends, arrival_prob } => MultihopNetwork::trap(*dead_ends, *arrival_prob),
            TopologySpec::Explicit { nodes, links, commodities } => MultihopNetwork::new(*nodes, links.clone(), commodities.clone()),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn mode(&self) -> Mode {
        if self.multi_hop.is_some() {
            Mode::MultiHop
        } else {
            Mode::SingleHopOfdma
        }
    }

    pub fn policy_name(&self) -> String {
        match (&self.single_hop, &self.multi_hop) {
            (Some(s), _) => s.policy.name().to_string(),
            (_, Some(m)) => serde_json::to_value(m.variant).ok().and_then(|v| v["kind"].as_str().map(String::from)).unwrap_or_default(),
            _ => String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported; expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.warmup >= self.horizon {
            return Err(Error::Config(format!("warm-up {} must be below the horizon {}", self.warmup, self.horizon)));
        }
        match (&self.single_hop, &self.multi_hop) {
            (Some(s), None) => s.validate(),
            (None, Some(m)) => {
                m.variant.validate()?;
                m.topology.build().map(|_| ())
            }
            _ => Err(Error::Config("exactly one of [single_hop] and [multi_hop] must be given".into())),
        }
    }
}

impl SingleHop {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.tau, self.subband_bandwidth_hz, self.buffer, self.peak_factor];
        if self.links == 0 || self.subbands == 0 || positive.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::Config("links, subbands, tau, bandwidth, buffer and peak factor must be positive".into()));
        }
        if !self.avg_snr_db.is_finite() {
            return Err(Error::Config("average SNR must be finite".into()));
        }
        self.traffic()?.validate()?;
        self.channel_model()?.require_irreducible()?;
        self.policy.validate()?;
        if self.policy.is_mdp() {
            if !self.traffic()?.is_packet() {
                return Err(Error::Mismatch(format!("{} needs packet traffic", self.policy.name())));
            }
            if self.buffer.fract() != 0.0 {
                return Err(Error::Config("packet buffer must be a whole number".into()));
            }
            self.mdp_config()?.validate()?;
        }
        let c = &self.cost;
        if !(c.nu >= 0.0 && c.eta >= 0.0 && c.gamma >= 0.0) {
            return Err(Error::Config("cost weights must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn traffic(&self) -> Result<TrafficModel> {
        let t = match self.traffic {
            TrafficSpec::Bit { mean_bits, max_bits } => TrafficModel::Bit { mean_bits, max_bits },
            TrafficSpec::PoissonPacket { rate_pps, mean_size_bits } => TrafficModel::PoissonPacket { rate_pps, mean_size_bits, tau: self.tau },
        };
        t.validate()?;
        Ok(t)
    }

    pub fn unit(&self) -> QueueUnit {
        match self.traffic {
            TrafficSpec::Bit { .. } => QueueUnit::Fluid,
            TrafficSpec::PoissonPacket { .. } => QueueUnit::Packet,
        }
    }

    pub fn channel_model(&self) -> Result<ChannelModel> {
        match &self.channel {
            ChannelSpec::Rayleigh { levels, persistence } => ChannelModel::rayleigh_birth_death(*levels, *persistence),
            ChannelSpec::Explicit { levels, transition } => ChannelModel::new(levels.clone(), transition.clone()),
            ChannelSpec::Constant { gain } => ChannelModel::constant(*gain),
        }
    }

    /// Per-link average power budget in linear units.
    pub fn power_budget(&self) -> f64 {
        10f64.powf(self.avg_snr_db / 10.0)
    }

    pub fn peak_power(&self) -> f64 {
        self.peak_factor * self.power_budget()
    }

    /// Bits served per unit of spectral efficiency in one slot.
    pub fn bits_per_unit(&self) -> f64 {
        self.tau * self.subband_bandwidth_hz
    }

    pub fn cost_weights(&self) -> CostWeights {
        CostWeights::uniform(self.links, self.cost.nu, self.cost.eta, self.cost.gamma)
    }

    /// Birth-death model behind the MDP policies. The power grid runs up to
    /// the peak so the continuous rule and the discrete model share a cap.
    pub fn mdp_config(&self) -> Result<MdpConfig> {
        let (nu, eta, gamma) = match self.policy {
            PolicySpec::ApproxMdp { nu, eta, gamma } | PolicySpec::LearnedPotential { nu, eta, gamma, .. } => (nu, eta, gamma),
            _ => return Err(Error::Mismatch(format!("{} has no MDP model", self.policy.name()))),
        };
        let TrafficSpec::PoissonPacket { rate_pps, mean_size_bits } = self.traffic else {
            return Err(Error::Mismatch("MDP policies need packet traffic".into()));
        };
        let peak = self.peak_power();
        Ok(MdpConfig {
            links: self.links,
            subcarriers: self.subbands,
            channel: self.channel_model()?,
            buffer: self.buffer as usize,
            arrival_prob: vec![rate_pps * self.tau; self.links],
            service_scale: vec![self.bits_per_unit() / mean_size_bits; self.links],
            power_levels: vec![peak / 4.0, peak / 2.0, peak],
            weights: CostWeights::uniform(self.links, nu, eta, gamma),
        })
    }
}
