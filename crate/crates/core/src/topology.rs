//! Platform cost models, node placement and packet loss.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::rng::SimRng;
use crate::time::SimTime;

pub type Rank = usize;

/// Ports per leaf switch in the two-level switch abstraction.
pub const DEFAULT_LEAF_PORTS: usize = 8;

/// Presets shipped with the crate.
pub const BUILTIN_PRESETS: &str = include_str!("../presets/platforms.json");

/// Per-hop and per-task latency constants of one simulated platform.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub platform_name: String,
    pub c_host_proc: SimTime,
    pub c_host_post: SimTime,
    pub c_nic_to_host_event: SimTime,
    pub c_queue_pass: SimTime,
    pub c_pkt_alloc: SimTime,
    pub c_nic_send: SimTime,
    pub c_nic_recv: SimTime,
    pub c_record: SimTime,
    pub c_wire: SimTime,
    pub c_hop: SimTime,
    pub loss_prob: f64,
    pub sender_timeout: SimTime,
    pub receiver_timeout: SimTime,
    pub reliable_network: bool,
    pub leaf_ports: usize,
}

/// On-disk form: every time in decimal microseconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModelSpec {
    pub c_host_proc: f64,
    pub c_host_post: f64,
    pub c_nic_to_host_event: f64,
    pub c_queue_pass: f64,
    pub c_pkt_alloc: f64,
    pub c_nic_send: f64,
    pub c_nic_recv: f64,
    pub c_record: f64,
    pub c_wire: f64,
    pub c_hop: f64,
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default)]
    pub sender_timeout: Option<f64>,
    #[serde(default)]
    pub receiver_timeout: Option<f64>,
    pub reliable_network: bool,
    #[serde(default)]
    pub leaf_ports: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetFile {
    pub version: u32,
    pub platforms: BTreeMap<String, CostModelSpec>,
}

fn us(field: &str, v: f64) -> Result<SimTime, ConfigError> {
    SimTime::from_micros_f64(v).ok_or_else(|| ConfigError::invalid(field, format!("must be a finite time >= 0, got {v}")))
}

impl CostModel {
    pub fn from_spec(name: &str, s: &CostModelSpec) -> Result<Self, ConfigError> {
        let mut m = CostModel {
            platform_name: name.to_string(),
            c_host_proc: us("c_host_proc", s.c_host_proc)?,
            c_host_post: us("c_host_post", s.c_host_post)?,
            c_nic_to_host_event: us("c_nic_to_host_event", s.c_nic_to_host_event)?,
            c_queue_pass: us("c_queue_pass", s.c_queue_pass)?,
            c_pkt_alloc: us("c_pkt_alloc", s.c_pkt_alloc)?,
            c_nic_send: us("c_nic_send", s.c_nic_send)?,
            c_nic_recv: us("c_nic_recv", s.c_nic_recv)?,
            c_record: us("c_record", s.c_record)?,
            c_wire: us("c_wire", s.c_wire)?,
            c_hop: us("c_hop", s.c_hop)?,
            loss_prob: s.loss_prob,
            sender_timeout: SimTime::ZERO,
            receiver_timeout: SimTime::ZERO,
            reliable_network: s.reliable_network,
            leaf_ports: s.leaf_ports.unwrap_or(DEFAULT_LEAF_PORTS),
        };
        if m.leaf_ports == 0 {
            return Err(ConfigError::invalid("leaf_ports", "must be >= 1"));
        }
        m.set_loss_prob(s.loss_prob)?;
        m.receiver_timeout = match s.receiver_timeout {
            Some(v) => us("receiver_timeout", v)?,
            None => m.default_receiver_timeout(),
        };
        m.sender_timeout = match s.sender_timeout {
            Some(v) => us("sender_timeout", v)?,
            None => m.receiver_timeout.checked_mul(2).ok_or(ConfigError::invalid("sender_timeout", "overflow"))?,
        };
        if m.receiver_timeout == SimTime::ZERO || m.sender_timeout == SimTime::ZERO {
            return Err(ConfigError::invalid("receiver_timeout", "timeouts must be positive"));
        }
        Ok(m)
    }

    /// 4 x (worst-case transit + receive + bookkeeping).
    pub fn default_receiver_timeout(&self) -> SimTime {
        let worst = self.c_wire + self.c_hop.checked_mul(3).expect("overflow") + self.c_nic_recv + self.c_record;
        worst.checked_mul(4).expect("overflow")
    }

    pub fn set_loss_prob(&mut self, p: f64) -> Result<(), ConfigError> {
        if !(0.0..1.0).contains(&p) {
            return Err(ConfigError::invalid("loss_prob", format!("must be in [0, 1), got {p}")));
        }
        if self.reliable_network && p > 0.0 {
            return Err(ConfigError::invalid(
                "loss_prob",
                format!("platform `{}` models a reliable network; loss_prob must be 0", self.platform_name),
            ));
        }
        self.loss_prob = p;
        Ok(())
    }

    /// Multiplies every time constant by `k` (used by invariance checks).
    pub fn scaled(&self, k: u64) -> CostModel {
        let s = |t: SimTime| t.checked_mul(k).expect("overflow");
        CostModel {
            c_host_proc: s(self.c_host_proc),
            c_host_post: s(self.c_host_post),
            c_nic_to_host_event: s(self.c_nic_to_host_event),
            c_queue_pass: s(self.c_queue_pass),
            c_pkt_alloc: s(self.c_pkt_alloc),
            c_nic_send: s(self.c_nic_send),
            c_nic_recv: s(self.c_nic_recv),
            c_record: s(self.c_record),
            c_wire: s(self.c_wire),
            c_hop: s(self.c_hop),
            sender_timeout: s(self.sender_timeout),
            receiver_timeout: s(self.receiver_timeout),
            ..self.clone()
        }
    }
}

pub fn parse_presets(json: &str) -> Result<BTreeMap<String, CostModel>, ConfigError> {
    let file: PresetFile = serde_json::from_str(json).map_err(|e| ConfigError::Preset(e.to_string()))?;
    if file.version != 1 {
        return Err(ConfigError::Preset(format!("unsupported preset version {}", file.version)));
    }
    file.platforms
        .iter()
        .map(|(name, spec)| Ok((name.clone(), CostModel::from_spec(name, spec)?)))
        .collect()
}

pub fn builtin_presets() -> BTreeMap<String, CostModel> {
    parse_presets(BUILTIN_PRESETS).expect("shipped presets are valid")
}

pub fn preset(name: &str) -> Result<CostModel, ConfigError> {
    builtin_presets()
        .remove(name)
        .ok_or_else(|| ConfigError::UnknownPlatform(name.to_string()))
}

/// Assignment of ranks to physical nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    rank_to_node: Vec<usize>,
    leaf_ports: usize,
}

impl Placement {
    pub fn identity(n: usize) -> Self {
        Placement { rank_to_node: (0..n).collect(), leaf_ports: DEFAULT_LEAF_PORTS }
    }

    pub fn from_table(rank_to_node: Vec<usize>, leaf_ports: usize) -> Result<Self, ConfigError> {
        let mut seen = vec![false; rank_to_node.len()];
        for &node in &rank_to_node {
            if node >= seen.len() || std::mem::replace(&mut seen[node], true) {
                return Err(ConfigError::invalid("rank_to_node", "not a permutation"));
            }
        }
        if leaf_ports == 0 {
            return Err(ConfigError::invalid("leaf_ports", "must be >= 1"));
        }
        Ok(Placement { rank_to_node, leaf_ports })
    }

    pub fn with_leaf_ports(mut self, ports: usize) -> Self {
        self.leaf_ports = ports.max(1);
        self
    }

    pub fn n_ranks(&self) -> usize {
        self.rank_to_node.len()
    }

    pub fn node_of(&self, rank: Rank) -> usize {
        self.rank_to_node[rank]
    }

    pub fn table(&self) -> &[usize] {
        &self.rank_to_node
    }

    /// One hop through a shared leaf switch, three hops (leaf, spine, leaf)
    /// otherwise.
    pub fn hop_count(&self, src: Rank, dst: Rank) -> u64 {
        if self.node_of(src) / self.leaf_ports == self.node_of(dst) / self.leaf_ports {
            1
        } else {
            3
        }
    }
}

/// Wire time between two distinct ranks.
pub fn transit_time(model: &CostModel, placement: &Placement, src: Rank, dst: Rank) -> SimTime {
    assert!(src != dst, "transit_time: rank {src} sending to itself");
    assert!(src < placement.n_ranks() && dst < placement.n_ranks(), "transit_time: rank out of range");
    model.c_wire + model.c_hop.checked_mul(placement.hop_count(src, dst)).expect("overflow")
}

pub fn should_drop(model: &CostModel, rng: &mut SimRng) -> bool {
    model.loss_prob > 0.0 && rng.chance(model.loss_prob)
}

/// Uniformly random placement (Fisher-Yates over the rng stream).
pub fn permute_placement(n: usize, rng: &mut SimRng) -> Placement {
    assert!(n >= 1, "placement needs at least one rank");
    let mut table: Vec<usize> = (0..n).collect();
    table.shuffle(rng.inner_mut());
    Placement { rank_to_node: table, leaf_ports: DEFAULT_LEAF_PORTS }
}
