//! Packet traces, barrier entry/exit logs, and the checkers that run over them.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::packet::{GroupId, Packet, PacketKind};
use crate::time::SimTime;
use crate::topology::Rank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum TraceAction {
    Send,
    Recv,
    Drop,
    Retransmit,
    /// Receiver consumed a data-bearing packet (not a duplicate or out-of-order
    /// discard). Kept for the checkers; omitted from the CSV export.
    Accept,
}

impl TraceAction {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceAction::Send => "send",
            TraceAction::Recv => "recv",
            TraceAction::Drop => "drop",
            TraceAction::Retransmit => "retransmit",
            TraceAction::Accept => "accept",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub time: SimTime,
    pub action: TraceAction,
    pub packet: Packet,
}

/// Aggregate packet accounting. `sent` counts every transmission, including
/// retransmissions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PacketCounts {
    pub barrier: u64,
    pub data: u64,
    pub ack: u64,
    pub nack: u64,
    pub retransmits: u64,
    pub drops: u64,
}

impl PacketCounts {
    pub fn total(&self) -> u64 {
        self.barrier + self.data + self.ack + self.nack
    }

    fn bump(&mut self, kind: PacketKind) {
        match kind {
            PacketKind::Barrier => self.barrier += 1,
            PacketKind::Data => self.data += 1,
            PacketKind::Ack => self.ack += 1,
            PacketKind::Nack => self.nack += 1,
        }
    }
}

#[derive(Debug, Default)]
pub struct Recorder {
    enabled: bool,
    events: Vec<TraceEvent>,
    counts: PacketCounts,
}

impl Recorder {
    pub fn new(enabled: bool) -> Self {
        Recorder { enabled, ..Default::default() }
    }

    pub fn record(&mut self, time: SimTime, action: TraceAction, packet: Packet) {
        match action {
            TraceAction::Send => self.counts.bump(packet.kind),
            TraceAction::Retransmit => {
                self.counts.bump(packet.kind);
                self.counts.retransmits += 1;
            }
            TraceAction::Drop => self.counts.drops += 1,
            TraceAction::Recv | TraceAction::Accept => {}
        }
        if self.enabled {
            self.events.push(TraceEvent { time, action, packet });
        }
    }

    pub fn counts(&self) -> &PacketCounts {
        &self.counts
    }

    /// Trace sorted by time; ties keep recording order.
    pub fn into_events(mut self) -> Vec<TraceEvent> {
        self.events.sort_by_key(|e| e.time);
        self.events
    }
}

/// Transmissions (send + retransmit) keyed by (kind, src, dst).
pub fn count_packets(trace: &[TraceEvent]) -> BTreeMap<(PacketKind, Rank, Rank), u64> {
    let mut out = BTreeMap::new();
    for e in trace {
        if matches!(e.action, TraceAction::Send | TraceAction::Retransmit) {
            *out.entry((e.packet.kind, e.packet.src, e.packet.dst)).or_insert(0) += 1;
        }
    }
    out
}

pub fn totals_by_kind(trace: &[TraceEvent]) -> BTreeMap<PacketKind, u64> {
    let mut out = BTreeMap::new();
    for ((kind, _, _), c) in count_packets(trace) {
        *out.entry(kind).or_insert(0) += c;
    }
    out
}

pub const TRACE_CSV_HEADER: &str = "time_ns,kind,src,dst,group,round,seq,action";

/// One row per packet event. For ACK rows `seq` holds the cumulative link sequence.
pub fn trace_to_csv(trace: &[TraceEvent]) -> String {
    let mut out = String::with_capacity(trace.len() * 40 + 64);
    out.push_str(TRACE_CSV_HEADER);
    out.push('\n');
    for e in trace.iter().filter(|e| e.action != TraceAction::Accept) {
        let p = &e.packet;
        let seq = if p.kind == PacketKind::Ack { p.link_seq } else { p.seq };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.time.as_nanos(),
            p.kind,
            p.src,
            p.dst,
            p.group,
            p.round,
            seq,
            e.action.as_str()
        );
    }
    out
}

/// One rank's passage through one barrier instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BarrierRecord {
    pub rank: Rank,
    pub group: GroupId,
    pub seq: u64,
    pub entered: SimTime,
    pub exited: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SafetyViolation {
    pub group: GroupId,
    pub seq: u64,
    pub rank: Rank,
    pub exited: SimTime,
    pub last_entry: SimTime,
}

/// Flags every exit from barrier `k` that happens before the last member
/// entered `k`. `members` gives each group's size.
pub fn check_safety(log: &[BarrierRecord], members: &HashMap<GroupId, usize>) -> Vec<SafetyViolation> {
    let mut entries: HashMap<(GroupId, u64), (usize, SimTime)> = HashMap::new();
    for r in log {
        let e = entries.entry((r.group, r.seq)).or_insert((0, SimTime::ZERO));
        e.0 += 1;
        e.1 = e.1.max(r.entered);
    }
    let mut out = Vec::new();
    for r in log {
        let Some(exited) = r.exited else { continue };
        let (count, last_entry) = entries[&(r.group, r.seq)];
        let complete_entry = members.get(&r.group).is_some_and(|&m| count >= m);
        if !complete_entry || exited < last_entry {
            out.push(SafetyViolation { group: r.group, seq: r.seq, rank: r.rank, exited, last_entry });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LookaheadViolation {
    pub time: SimTime,
    pub rank: Rank,
    pub group: GroupId,
    pub packet_seq: u64,
    pub local_seq: u64,
}

/// A barrier packet arriving at a rank whose latest entered barrier is `c`
/// must carry a sequence number of at most `c + 1`.
pub fn check_lookahead(trace: &[TraceEvent], log: &[BarrierRecord]) -> Vec<LookaheadViolation> {
    let mut entries: HashMap<(Rank, GroupId), Vec<(SimTime, u64)>> = HashMap::new();
    for r in log {
        entries.entry((r.rank, r.group)).or_default().push((r.entered, r.seq));
    }
    for v in entries.values_mut() {
        v.sort();
    }
    let mut out = Vec::new();
    for e in trace {
        let p = &e.packet;
        if e.action != TraceAction::Recv || !matches!(p.kind, PacketKind::Barrier | PacketKind::Data) {
            continue;
        }
        let local = entries
            .get(&(p.dst, p.group))
            .and_then(|v| v.iter().take_while(|(t, _)| *t <= e.time).map(|&(_, s)| s).max())
            .unwrap_or(0);
        if p.seq > local + 1 {
            out.push(LookaheadViolation { time: e.time, rank: p.dst, group: p.group, packet_seq: p.seq, local_seq: local });
        }
    }
    out
}

/// A dropped packet with no recovery in the rest of the trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnrecoveredDrop {
    pub event: TraceEvent,
}

type MsgKey = (Rank, Rank, GroupId, usize, u64);

fn msg_key(p: &Packet) -> MsgKey {
    (p.src, p.dst, p.group, p.round, p.seq)
}

/// Checks that every drop is answered by the protocol:
///
/// * a lost BARRIER/DATA packet whose message had not been accepted yet is
///   followed by a retransmission of that message;
/// * a lost NACK is followed by a retransmission of the message it asked for,
///   or by that message being accepted (the original was late, not lost);
/// * a lost ACK is followed by a retransmission on that link of data it
///   covered, or another ACK covering at least as much reaches the sender.
pub fn check_drop_recovery(trace: &[TraceEvent]) -> Vec<UnrecoveredDrop> {
    let mut accepted: HashMap<MsgKey, Vec<SimTime>> = HashMap::new();
    let mut retransmitted: HashMap<MsgKey, Vec<SimTime>> = HashMap::new();
    // (data src, data dst) -> (time, link_seq)
    let mut data_retx: HashMap<(Rank, Rank), Vec<(SimTime, u64)>> = HashMap::new();
    let mut acks: HashMap<(Rank, Rank), Vec<(SimTime, u64)>> = HashMap::new();
    for e in trace {
        let p = &e.packet;
        match (e.action, p.kind) {
            (TraceAction::Accept, PacketKind::Barrier | PacketKind::Data) => {
                accepted.entry(msg_key(p)).or_default().push(e.time)
            }
            (TraceAction::Retransmit, PacketKind::Barrier | PacketKind::Data) => {
                retransmitted.entry(msg_key(p)).or_default().push(e.time);
                if p.kind == PacketKind::Data {
                    data_retx.entry((p.src, p.dst)).or_default().push((e.time, p.link_seq));
                }
            }
            (TraceAction::Recv, PacketKind::Ack) => acks.entry((p.src, p.dst)).or_default().push((e.time, p.link_seq)),
            _ => {}
        }
    }
    let any_at_or_after = |v: Option<&Vec<SimTime>>, t: SimTime| v.is_some_and(|v| v.iter().any(|&x| x >= t));
    let any_before = |v: Option<&Vec<SimTime>>, t: SimTime| v.is_some_and(|v| v.iter().any(|&x| x < t));

    let mut out = Vec::new();
    for e in trace.iter().filter(|e| e.action == TraceAction::Drop) {
        let p = &e.packet;
        let ok = match p.kind {
            PacketKind::Barrier | PacketKind::Data => {
                let k = msg_key(p);
                any_before(accepted.get(&k), e.time) || any_at_or_after(retransmitted.get(&k), e.time)
            }
            PacketKind::Nack => {
                // NACK travels receiver -> sender; the message flows the other way.
                let k = (p.dst, p.src, p.group, p.round, p.seq);
                any_at_or_after(retransmitted.get(&k), e.time) || any_at_or_after(accepted.get(&k), e.time)
            }
            PacketKind::Ack => {
                let retx = data_retx
                    .get(&(p.dst, p.src))
                    .is_some_and(|v| v.iter().any(|&(t, s)| t >= e.time && s <= p.link_seq));
                let covering_ack = acks
                    .get(&(p.src, p.dst))
                    .is_some_and(|v| v.iter().any(|&(_, s)| s >= p.link_seq));
                retx || covering_ack
            }
        };
        if !ok {
            out.push(UnrecoveredDrop { event: *e });
        }
    }
    out
}
