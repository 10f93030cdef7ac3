//! The simulated cluster: one host and one NIC per rank, wired to the engine.
//!
//! Hosts and NICs are single-server resources. A task of cost `c` requested
//! at time `t` runs over `[max(t, busy_until), max(t, busy_until) + c)`; the
//! effects of the task (a packet leaving, a host notification) happen at its
//! end time.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::barrier::{Arrival, BarrierState};
use crate::collective::{CollectiveNic, GroupHandle};
use crate::elan::ElanGroup;
use crate::engine::{Engine, EngineError, EntityId, Event, EventHandle, DEFAULT_EVENT_BUDGET};
use crate::error::{ConfigError, SimError};
use crate::packet::{GroupId, Packet, PacketKind};
use crate::pt2pt::{BarrierMsg, NicPt2ptState, DEFAULT_PACKET_POOL, DEFAULT_RETRY_LIMIT};
use crate::rng::SimRng;
use crate::schedule::{build_all, validate_schedules, AlgorithmKind, Schedule};
use crate::time::SimTime;
use crate::topology::{should_drop, transit_time, CostModel, Placement, Rank};
use crate::trace::{BarrierRecord, PacketCounts, Recorder, TraceAction, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Host runs the algorithm over the point-to-point protocol.
    #[serde(rename = "host")]
    Host,
    /// NIC runs the algorithm over the point-to-point protocol.
    #[serde(rename = "nic-pt2pt")]
    NicPt2pt,
    /// NIC runs the algorithm over the dedicated collective protocol.
    #[serde(rename = "nic-collective")]
    NicCollective,
    /// Chained RDMA descriptors on a reliable network.
    #[serde(rename = "elan-chain")]
    ElanChain,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Host, Mode::NicPt2pt, Mode::NicCollective, Mode::ElanChain];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Host => "host",
            Mode::NicPt2pt => "nic-pt2pt",
            Mode::NicCollective => "nic-collective",
            Mode::ElanChain => "elan-chain",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ConfigError::invalid("mode", format!("unknown mode `{s}` (expected host, nic-pt2pt, nic-collective or elan-chain)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    pub members: Vec<Rank>,
    pub alg: AlgorithmKind,
}

/// Drops the next `remaining` transmissions matching every set field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForcedDrop {
    pub kind: PacketKind,
    pub src: Option<Rank>,
    pub dst: Option<Rank>,
    pub round: Option<usize>,
    pub seq: Option<u64>,
    pub remaining: u32,
}

impl ForcedDrop {
    pub fn once(kind: PacketKind) -> Self {
        ForcedDrop { kind, src: None, dst: None, round: None, seq: None, remaining: 1 }
    }

    fn matches(&self, p: &Packet) -> bool {
        self.remaining > 0
            && self.kind == p.kind
            && self.src.is_none_or(|s| s == p.src)
            && self.dst.is_none_or(|d| d == p.dst)
            && self.round.is_none_or(|r| r == p.round)
            && self.seq.is_none_or(|s| s == p.seq)
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: CostModel,
    pub placement: Placement,
    pub mode: Mode,
    pub groups: Vec<GroupSpec>,
    /// Consecutive barriers each group runs.
    pub barriers: u64,
    pub seed: u64,
    /// Each barrier entry is delayed by a uniform draw from `[0, host_skew]`.
    pub host_skew: SimTime,
    /// Extra delay before `(rank, group, seq)` enters its barrier.
    pub entry_delays: HashMap<(Rank, GroupId, u64), SimTime>,
    pub trace: bool,
    pub keep_log: bool,
    pub retry_limit: u32,
    pub packet_pool: usize,
    /// Point-to-point ACKs (and with them, reliability) on or off.
    pub pt2pt_acks: bool,
    pub event_budget: u64,
    pub forced_drops: Vec<ForcedDrop>,
}

impl SimConfig {
    /// One group spanning ranks `0..n`, identity placement, all defaults.
    pub fn new(model: CostModel, mode: Mode, alg: AlgorithmKind, n: usize) -> Self {
        let leaf_ports = model.leaf_ports;
        SimConfig {
            model,
            placement: Placement::identity(n).with_leaf_ports(leaf_ports),
            mode,
            groups: vec![GroupSpec { members: (0..n).collect(), alg }],
            barriers: 1,
            seed: 0,
            host_skew: SimTime::ZERO,
            entry_delays: HashMap::new(),
            trace: false,
            keep_log: false,
            retry_limit: DEFAULT_RETRY_LIMIT,
            packet_pool: DEFAULT_PACKET_POOL,
            pt2pt_acks: true,
            event_budget: DEFAULT_EVENT_BUDGET,
            forced_drops: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.placement.n_ranks();
        if self.groups.is_empty() {
            return Err(ConfigError::invalid("groups", "at least one group is required"));
        }
        for g in &self.groups {
            if g.members.is_empty() || g.members.iter().any(|&m| m >= n) {
                return Err(ConfigError::invalid("groups", "members must be nonempty and within the placement"));
            }
            let mut sorted = g.members.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(ConfigError::invalid("groups", "duplicate member"));
            }
        }
        if self.mode == Mode::ElanChain {
            if !self.model.reliable_network {
                return Err(ConfigError::invalid(
                    "mode",
                    format!("elan-chain requires a reliable platform; `{}` is not", self.model.platform_name),
                ));
            }
            if self.model.loss_prob > 0.0 || !self.forced_drops.is_empty() {
                return Err(ConfigError::invalid("loss_prob", "loss injection is not possible on the elan-chain backend"));
            }
        }
        let lossy = self.model.loss_prob > 0.0 || !self.forced_drops.is_empty();
        if lossy && !self.pt2pt_acks && matches!(self.mode, Mode::Host | Mode::NicPt2pt) {
            return Err(ConfigError::invalid("pt2pt_acks", "loss requires point-to-point ACKs"));
        }
        if self.packet_pool == 0 {
            return Err(ConfigError::invalid("packet_pool", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Msg {
    /// Host begins its next barrier on the group.
    Enter { group: GroupId },
    /// NIC hands a received barrier message to the host (host-based mode).
    Deliver { group: GroupId, round: usize, seq: u64, src: Rank },
    /// NIC reports barrier completion to the host.
    HostComplete { group: GroupId, seq: u64 },
    /// Host posts a send descriptor to the NIC (host-based mode).
    Post { group: GroupId, round: usize, seq: u64, dst: Rank },
    /// Host asks the NIC to run the next barrier.
    Start { group: GroupId },
    Arrive(Packet),
    SendTimeout { dst: Rank, link_seq: u64 },
    RecvTimeout { group: GroupId, seq: u64 },
}

fn host_entity(r: Rank) -> EntityId {
    EntityId((2 * r) as u32)
}

fn nic_entity(r: Rank) -> EntityId {
    EntityId((2 * r + 1) as u32)
}

/// Everything a NIC handler may touch.
pub struct NicCtx<'a> {
    rank: Rank,
    busy: &'a mut SimTime,
    loss_rng: &'a mut SimRng,
    engine: &'a mut Engine<Msg>,
    recorder: &'a mut Recorder,
    forced: &'a mut Vec<ForcedDrop>,
    model: &'a CostModel,
    placement: &'a Placement,
}

impl<'a> NicCtx<'a> {
    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn model(&self) -> &'a CostModel {
        self.model
    }

    pub fn now(&self) -> SimTime {
        self.engine.now()
    }

    pub fn busy_until(&self) -> SimTime {
        (*self.busy).max(self.engine.now())
    }

    /// Occupies the NIC processor for `cost`; returns the finish time.
    pub fn work(&mut self, cost: SimTime) -> Result<SimTime, SimError> {
        let start = self.busy_until();
        let end = start.checked_add(cost).ok_or(EngineError::TimeOverflow)?;
        *self.busy = end;
        Ok(end)
    }

    /// Puts `pkt` on the wire at `at`, subject to loss.
    pub fn transmit(&mut self, at: SimTime, pkt: Packet, action: TraceAction) -> Result<(), SimError> {
        self.recorder.record(at, action, pkt);
        let forced = match self.forced.iter_mut().find(|f| f.matches(&pkt)) {
            Some(f) => {
                f.remaining -= 1;
                true
            }
            None => false,
        };
        if forced || should_drop(self.model, self.loss_rng) {
            self.recorder.record(at, TraceAction::Drop, pkt);
            return Ok(());
        }
        let arrival = at
            .checked_add(transit_time(self.model, self.placement, pkt.src, pkt.dst))
            .ok_or(EngineError::TimeOverflow)?;
        self.engine.schedule(arrival, nic_entity(pkt.dst), Msg::Arrive(pkt))?;
        Ok(())
    }

    /// Records that `pkt` was consumed, once the NIC has finished receiving it.
    pub fn accept(&mut self, pkt: &Packet) {
        self.recorder.record(self.busy_until(), TraceAction::Accept, *pkt);
    }

    pub fn timer(&mut self, at: SimTime, msg: Msg) -> Result<EventHandle, SimError> {
        Ok(self.engine.schedule(at, nic_entity(self.rank), msg)?)
    }

    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.engine.cancel(handle)
    }

    /// Raises `msg` at the host; it lands `c_nic_to_host_event` after `at`.
    pub fn notify_host(&mut self, at: SimTime, msg: Msg) -> Result<(), SimError> {
        let when = at.checked_add(self.model.c_nic_to_host_event).ok_or(EngineError::TimeOverflow)?;
        self.engine.schedule(when, host_entity(self.rank), msg)?;
        Ok(())
    }
}

struct GroupInfo {
    members: Vec<Rank>,
    local_of: HashMap<Rank, usize>,
    schedules: Vec<Schedule>,
}

struct Clock {
    host_busy: SimTime,
    nic_busy: SimTime,
    loss_rng: SimRng,
    skew_rng: SimRng,
}

struct HostGroup {
    seq: u64,
    entered_at: SimTime,
    log_index: Option<usize>,
    /// Host-based mode keeps the barrier state on the host.
    state: Option<BarrierState>,
}

enum NicGroup {
    Pt2pt(BarrierState),
    Collective(GroupHandle),
    Elan(Box<ElanGroup>),
    Passive,
}

struct Proto {
    link: NicPt2ptState,
    collective: CollectiveNic,
    host: HashMap<GroupId, HostGroup>,
    nic: HashMap<GroupId, NicGroup>,
}

/// Per-group results.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupOutcome {
    pub group: GroupId,
    pub n: usize,
    /// For each barrier, the sum over members of (exit - entry) in ns.
    pub latency_sum_ns: Vec<u64>,
    pub exits: Vec<u32>,
}

impl GroupOutcome {
    pub fn completed_all(&self) -> bool {
        self.exits.iter().all(|&e| e as usize == self.n)
    }

    /// Mean per-rank latency of barrier `k` (0-based), in microseconds.
    pub fn latency_us(&self, k: usize) -> f64 {
        self.latency_sum_ns[k] as f64 / self.n as f64 / 1000.0
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub groups: Vec<GroupOutcome>,
    pub log: Vec<BarrierRecord>,
    pub trace: Vec<TraceEvent>,
    pub counts: PacketCounts,
    pub end_time: SimTime,
    pub events: u64,
    pub queue_passes: u64,
}

struct World<'c> {
    cfg: &'c SimConfig,
    engine: Engine<Msg>,
    recorder: Recorder,
    forced: Vec<ForcedDrop>,
    groups: Vec<GroupInfo>,
    clocks: Vec<Clock>,
    protos: Vec<Proto>,
    outcomes: Vec<GroupOutcome>,
    log: Vec<BarrierRecord>,
}

pub fn simulate(cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    cfg.validate()?;
    let mut world = World::new(cfg)?;
    for g in 0..world.groups.len() {
        for r in world.groups[g].members.clone() {
            let delay = world.entry_delay(r, g as GroupId, 1);
            world.engine.schedule(delay, host_entity(r), Msg::Enter { group: g as GroupId })?;
        }
    }
    while let Some(ev) = world.engine.pop()? {
        world.handle(ev)?;
    }
    let end_time = world.engine.now();
    let events = world.engine.dispatched();
    let queue_passes = world.protos.iter().map(|p| p.link.queue_passes()).sum();
    let counts = world.recorder.counts().clone();
    Ok(SimOutcome {
        groups: world.outcomes,
        log: world.log,
        trace: world.recorder.into_events(),
        counts,
        end_time,
        events,
        queue_passes,
    })
}

impl<'c> World<'c> {
    fn new(cfg: &'c SimConfig) -> Result<Self, SimError> {
        let n = cfg.placement.n_ranks();
        let mut groups = Vec::new();
        for spec in &cfg.groups {
            let schedules = build_all(spec.alg, spec.members.len())?;
            validate_schedules(&schedules)
                .map_err(|v| SimError::Contract(format!("invalid schedule for {}: {v}", spec.alg)))?;
            let local_of = spec.members.iter().enumerate().map(|(i, &r)| (r, i)).collect();
            groups.push(GroupInfo { members: spec.members.clone(), local_of, schedules });
        }
        let clocks = (0..n)
            .map(|r| Clock {
                host_busy: SimTime::ZERO,
                nic_busy: SimTime::ZERO,
                loss_rng: SimRng::for_entity(cfg.seed, nic_entity(r).0 as u64),
                skew_rng: SimRng::for_entity(cfg.seed, host_entity(r).0 as u64),
            })
            .collect();
        let mut protos: Vec<Proto> = (0..n)
            .map(|_| Proto {
                link: NicPt2ptState::new(cfg.packet_pool, cfg.pt2pt_acks),
                collective: CollectiveNic::new(),
                host: HashMap::new(),
                nic: HashMap::new(),
            })
            .collect();
        for (g, info) in groups.iter().enumerate() {
            let gid = g as GroupId;
            for (local, &r) in info.members.iter().enumerate() {
                let schedule = &info.schedules[local];
                let p = &mut protos[r];
                p.host.insert(
                    gid,
                    HostGroup {
                        seq: 0,
                        entered_at: SimTime::ZERO,
                        log_index: None,
                        state: (cfg.mode == Mode::Host).then(|| BarrierState::new(schedule)),
                    },
                );
                let nic = match cfg.mode {
                    Mode::Host => NicGroup::Passive,
                    Mode::NicPt2pt => NicGroup::Pt2pt(BarrierState::new(schedule)),
                    Mode::NicCollective => NicGroup::Collective(p.collective.register_group(
                        gid,
                        info.members.clone(),
                        r,
                        schedule.clone(),
                    )?),
                    Mode::ElanChain => NicGroup::Elan(Box::new(ElanGroup::new(gid, info.members.clone(), schedule))),
                };
                p.nic.insert(gid, nic);
            }
        }
        let outcomes = groups
            .iter()
            .enumerate()
            .map(|(g, info)| GroupOutcome {
                group: g as GroupId,
                n: info.members.len(),
                latency_sum_ns: vec![0; cfg.barriers as usize],
                exits: vec![0; cfg.barriers as usize],
            })
            .collect();
        Ok(World {
            cfg,
            engine: Engine::with_budget(cfg.event_budget),
            recorder: Recorder::new(cfg.trace),
            forced: cfg.forced_drops.clone(),
            groups,
            clocks,
            protos,
            outcomes,
            log: Vec::new(),
        })
    }

    fn entry_delay(&mut self, rank: Rank, group: GroupId, seq: u64) -> SimTime {
        let skew = self.clocks[rank].skew_rng.upto(self.cfg.host_skew.as_nanos());
        let extra = self.cfg.entry_delays.get(&(rank, group, seq)).copied().unwrap_or(SimTime::ZERO);
        SimTime::from_nanos(skew) + extra
    }

    fn nic_ctx(&mut self, rank: Rank) -> (NicCtx<'_>, &mut Proto, &[GroupInfo]) {
        let clock = &mut self.clocks[rank];
        let ctx = NicCtx {
            rank,
            busy: &mut clock.nic_busy,
            loss_rng: &mut clock.loss_rng,
            engine: &mut self.engine,
            recorder: &mut self.recorder,
            forced: &mut self.forced,
            model: &self.cfg.model,
            placement: &self.cfg.placement,
        };
        (ctx, &mut self.protos[rank], &self.groups)
    }

    fn host_work(&mut self, rank: Rank, cost: SimTime) -> Result<SimTime, SimError> {
        let busy = &mut self.clocks[rank].host_busy;
        let start = (*busy).max(self.engine.now());
        let end = start.checked_add(cost).ok_or(EngineError::TimeOverflow)?;
        *busy = end;
        Ok(end)
    }

    fn host_now(&self, rank: Rank) -> SimTime {
        self.clocks[rank].host_busy.max(self.engine.now())
    }

    fn handle(&mut self, ev: Event<Msg>) -> Result<(), SimError> {
        let rank = (ev.target.0 / 2) as Rank;
        match ev.payload {
            Msg::Enter { group } => self.host_enter(rank, group),
            Msg::Deliver { group, round, seq, src } => self.host_deliver(rank, group, round, seq, src),
            Msg::HostComplete { group, seq } => self.host_exit(rank, group, seq, self.engine.now()),
            Msg::Post { group, round, seq, dst } => {
                let (mut ctx, proto, _) = self.nic_ctx(rank);
                proto.link.post_send(&mut ctx, dst, BarrierMsg { group, round, seq })
            }
            Msg::Start { group } => self.nic_start(rank, group),
            Msg::Arrive(pkt) => self.nic_arrive(rank, pkt),
            Msg::SendTimeout { dst, link_seq } => {
                let limit = self.cfg.retry_limit;
                let (mut ctx, proto, _) = self.nic_ctx(rank);
                proto.link.on_timeout(&mut ctx, dst, link_seq, limit)
            }
            Msg::RecvTimeout { group, seq } => {
                let (mut ctx, proto, _) = self.nic_ctx(rank);
                proto.collective.on_receiver_timeout(&mut ctx, group, seq)
            }
        }
    }

    fn host_enter(&mut self, rank: Rank, group: GroupId) -> Result<(), SimError> {
        let now = self.engine.now();
        let g = group as usize;
        let local = self.groups[g].local_of[&rank];
        let hg = self.protos[rank].host.get_mut(&group).expect("member");
        hg.seq += 1;
        hg.entered_at = now;
        let seq = hg.seq;
        if self.cfg.keep_log {
            hg.log_index = Some(self.log.len());
            self.log.push(BarrierRecord { rank, group, seq, entered: now, exited: None });
        }
        if self.groups[g].schedules[local].rounds.is_empty() {
            return self.host_exit(rank, group, seq, now);
        }
        let post = self.cfg.model.c_host_post;
        if self.cfg.mode == Mode::Host {
            let schedule = &self.groups[g].schedules[local];
            let state = hg.state.as_mut().expect("host-based state");
            let enabled = state.start(schedule)?;
            let done = state.take_completed();
            self.host_post_rounds(rank, group, seq, enabled)?;
            if done {
                return self.host_exit(rank, group, seq, self.host_now(rank));
            }
            Ok(())
        } else {
            let t = self.host_work(rank, post)?;
            self.engine.schedule(t, nic_entity(rank), Msg::Start { group })?;
            Ok(())
        }
    }

    fn host_post_rounds(&mut self, rank: Rank, group: GroupId, seq: u64, rounds: std::ops::Range<usize>) -> Result<(), SimError> {
        let g = group as usize;
        let local = self.groups[g].local_of[&rank];
        for round in rounds {
            for i in 0..self.groups[g].schedules[local].rounds[round].send_to.len() {
                let dst = self.groups[g].members[self.groups[g].schedules[local].rounds[round].send_to[i]];
                let t = self.host_work(rank, self.cfg.model.c_host_post)?;
                self.engine.schedule(t, nic_entity(rank), Msg::Post { group, round, seq, dst })?;
            }
        }
        Ok(())
    }

    fn host_deliver(&mut self, rank: Rank, group: GroupId, round: usize, seq: u64, src: Rank) -> Result<(), SimError> {
        self.host_work(rank, self.cfg.model.c_host_proc)?;
        let g = group as usize;
        let info = &self.groups[g];
        let local = info.local_of[&rank];
        let src_local = *info
            .local_of
            .get(&src)
            .ok_or_else(|| SimError::corruption(format!("message from non-member {src}")))?;
        let hg = self.protos[rank].host.get_mut(&group).expect("member");
        let state = hg.state.as_mut().expect("host-based state");
        let current = state.current();
        let arrival = state.arrival(&info.schedules[local], round, src_local, seq)?;
        let done = state.take_completed();
        if let Arrival::Applied { enabled, .. } = arrival {
            self.host_post_rounds(rank, group, current, enabled)?;
        }
        if done {
            self.host_exit(rank, group, current, self.host_now(rank))?;
        }
        Ok(())
    }

    fn host_exit(&mut self, rank: Rank, group: GroupId, seq: u64, at: SimTime) -> Result<(), SimError> {
        let hg = self.protos[rank].host.get_mut(&group).expect("member");
        if seq != hg.seq {
            return Err(SimError::corruption(format!("rank {rank}: completion for barrier {seq} while in {}", hg.seq)));
        }
        let latency = at.checked_sub(hg.entered_at).expect("exit after entry");
        if let Some(i) = hg.log_index.take() {
            self.log[i].exited = Some(at);
        }
        let k = (seq - 1) as usize;
        let out = &mut self.outcomes[group as usize];
        out.latency_sum_ns[k] += latency.as_nanos();
        out.exits[k] += 1;
        if seq < self.cfg.barriers {
            let next = at + self.entry_delay(rank, group, seq + 1);
            self.engine.schedule(next, host_entity(rank), Msg::Enter { group })?;
        }
        Ok(())
    }

    fn nic_start(&mut self, rank: Rank, group: GroupId) -> Result<(), SimError> {
        let (mut ctx, proto, groups) = self.nic_ctx(rank);
        let info = &groups[group as usize];
        let local = info.local_of[&rank];
        match proto.nic.get_mut(&group).expect("member") {
            NicGroup::Pt2pt(state) => {
                let schedule = &info.schedules[local];
                let enabled = state.start(schedule)?;
                let seq = state.current();
                let done = state.take_completed();
                for round in enabled {
                    for &dst in &schedule.rounds[round].send_to {
                        proto.link.post_send(&mut ctx, info.members[dst], BarrierMsg { group, round, seq })?;
                    }
                }
                if done {
                    let at = ctx.busy_until();
                    ctx.notify_host(at, Msg::HostComplete { group, seq })?;
                }
                Ok(())
            }
            NicGroup::Collective(handle) => proto.collective.initiate_barrier(&mut ctx, *handle).map(drop),
            NicGroup::Elan(chain) => chain.trigger_barrier(&mut ctx).map(drop),
            NicGroup::Passive => Err(SimError::Contract("barrier start on a host-based NIC".into())),
        }
    }

    fn nic_arrive(&mut self, rank: Rank, pkt: Packet) -> Result<(), SimError> {
        let mode = self.cfg.mode;
        let (mut ctx, proto, groups) = self.nic_ctx(rank);
        ctx.recorder.record(ctx.now(), TraceAction::Recv, pkt);
        match (pkt.kind, mode) {
            (PacketKind::Data, Mode::Host | Mode::NicPt2pt) => {
                let Some((msg, recorded)) = proto.link.on_data(&mut ctx, &pkt)? else {
                    return Ok(());
                };
                if mode == Mode::Host {
                    let deliver = Msg::Deliver { group: msg.group, round: msg.round, seq: msg.seq, src: pkt.src };
                    return ctx.notify_host(recorded, deliver);
                }
                let info = groups
                    .get(msg.group as usize)
                    .ok_or_else(|| SimError::corruption(format!("DATA for unknown group {}", msg.group)))?;
                let local = info.local_of[&rank];
                let src = *info
                    .local_of
                    .get(&pkt.src)
                    .ok_or_else(|| SimError::corruption(format!("DATA from non-member {}", pkt.src)))?;
                let Some(NicGroup::Pt2pt(state)) = proto.nic.get_mut(&msg.group) else {
                    return Err(SimError::corruption(format!("rank {rank} is not in group {}", msg.group)));
                };
                let schedule = &info.schedules[local];
                let current = state.current();
                let arrival = state.arrival(schedule, msg.round, src, msg.seq)?;
                let done = state.take_completed();
                if let Arrival::Applied { enabled, .. } = arrival {
                    for round in enabled {
                        for &dst in &schedule.rounds[round].send_to {
                            let m = BarrierMsg { group: msg.group, round, seq: current };
                            proto.link.post_send(&mut ctx, info.members[dst], m)?;
                        }
                    }
                }
                if done {
                    let at = ctx.busy_until();
                    ctx.notify_host(at, Msg::HostComplete { group: msg.group, seq: current })?;
                }
                Ok(())
            }
            (PacketKind::Ack, Mode::Host | Mode::NicPt2pt) => proto.link.on_ack(&mut ctx, &pkt),
            (PacketKind::Barrier, Mode::NicCollective) => proto.collective.on_barrier_packet(&mut ctx, &pkt),
            (PacketKind::Nack, Mode::NicCollective) => proto.collective.on_nack(&mut ctx, &pkt),
            (PacketKind::Barrier, Mode::ElanChain) => match proto.nic.get_mut(&pkt.group) {
                Some(NicGroup::Elan(chain)) => chain.on_rdma(&mut ctx, &pkt),
                _ => Err(SimError::corruption(format!("RDMA for unknown group {}", pkt.group))),
            },
            (kind, mode) => Err(SimError::corruption(format!("{kind} packet in {mode} mode"))),
        }
    }
}
