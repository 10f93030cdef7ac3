//! Dedicated NIC-level collective protocol for barriers.
//!
//! Each process group owns a queue at the NIC that holds at most one token, so
//! a barrier never waits behind point-to-point traffic. All of a barrier's
//! messages go out through one static packet whose only payload is the
//! barrier sequence number, and progress is kept in a single bit vector per
//! barrier. There are no ACKs: a receiver that times out NACKs each missing
//! (round, peer) and the sender regenerates the message from the sequence
//! number alone.

use std::collections::{BTreeSet, HashMap};

use crate::barrier::{Arrival, BarrierState};
use crate::engine::EventHandle;
use crate::error::SimError;
use crate::packet::{GroupId, Packet, PacketKind};
use crate::schedule::Schedule;
use crate::sim::{Msg, NicCtx};
use crate::time::SimTime;
use crate::topology::Rank;
use crate::trace::TraceAction;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BarrierGroup {
    pub group_id: GroupId,
    /// Global ranks, indexed by position in the group.
    pub members: Vec<Rank>,
    /// This NIC's position in `members`.
    pub me: usize,
    pub schedule: Schedule,
    index: HashMap<Rank, usize>,
}

impl BarrierGroup {
    pub fn local_of(&self, rank: Rank) -> Option<usize> {
        self.index.get(&rank).copied()
    }
}

/// Bookkeeping for the barrier in progress. The expected-arrival bit vector
/// is the tracker inside the group's [`BarrierState`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectiveRecord {
    pub group_id: GroupId,
    pub seq: u64,
    pub started_at: SimTime,
    pub nack_timer: Option<EventHandle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupHandle(pub GroupId);

#[derive(Debug)]
struct GroupSlot {
    group: BarrierGroup,
    state: BarrierState,
    record: Option<CollectiveRecord>,
}

#[derive(Debug, Default)]
pub struct CollectiveNic {
    slots: HashMap<GroupId, GroupSlot>,
    member_sets: BTreeSet<Vec<Rank>>,
    nacks_sent: u64,
    retransmits: u64,
}

impl CollectiveNic {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocates the group's dedicated queue and static packet. No traffic.
    pub fn register_group(
        &mut self,
        group_id: GroupId,
        members: Vec<Rank>,
        me: Rank,
        schedule: Schedule,
    ) -> Result<GroupHandle, SimError> {
        let mut sorted = members.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::Contract(format!("group {group_id}: duplicate member in {members:?}")));
        }
        if self.slots.contains_key(&group_id) || self.member_sets.contains(&sorted) {
            return Err(SimError::Contract(format!("group {group_id}: member set already registered")));
        }
        let local = members
            .iter()
            .position(|&m| m == me)
            .ok_or_else(|| SimError::Contract(format!("group {group_id}: rank {me} is not a member")))?;
        if schedule.n != members.len() || schedule.me != local {
            return Err(SimError::Contract(format!("group {group_id}: schedule does not fit the member list")));
        }
        let index = members.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let group = BarrierGroup { group_id, members, me: local, schedule, index };
        self.member_sets.insert(sorted);
        self.slots.insert(group_id, GroupSlot { state: BarrierState::new(&group.schedule), group, record: None });
        Ok(GroupHandle(group_id))
    }

    pub fn current_seq(&self, handle: GroupHandle) -> Option<u64> {
        self.slots.get(&handle.0).map(|s| s.state.current())
    }

    pub fn record(&self, handle: GroupHandle) -> Option<&CollectiveRecord> {
        self.slots.get(&handle.0).and_then(|s| s.record.as_ref())
    }

    pub fn nacks_sent(&self) -> u64 {
        self.nacks_sent
    }

    pub fn retransmits(&self) -> u64 {
        self.retransmits
    }

    fn slot(&mut self, group: GroupId) -> Result<&mut GroupSlot, SimError> {
        self.slots
            .get_mut(&group)
            .ok_or_else(|| SimError::corruption(format!("packet for unregistered group {group}")))
    }

    /// Starts the next barrier on `handle`: one token through the dedicated
    /// queue, one record, round-0 sends from the static packet.
    pub fn initiate_barrier(&mut self, ctx: &mut NicCtx<'_>, handle: GroupHandle) -> Result<u64, SimError> {
        let slot = self.slot(handle.0)?;
        let m = ctx.model();
        let enabled = slot.state.start(&slot.group.schedule)?;
        let seq = slot.state.current();
        let started = ctx.work(m.c_queue_pass + m.c_record)?;
        let timer = ctx.timer(started + m.receiver_timeout, Msg::RecvTimeout { group: handle.0, seq })?;
        slot.record = Some(CollectiveRecord { group_id: handle.0, seq, started_at: started, nack_timer: Some(timer) });
        send_rounds(ctx, &slot.group, enabled, seq)?;
        finish_if_complete(ctx, slot)?;
        Ok(seq)
    }

    pub fn on_barrier_packet(&mut self, ctx: &mut NicCtx<'_>, pkt: &Packet) -> Result<(), SimError> {
        debug_assert_eq!(pkt.kind, PacketKind::Barrier);
        let slot = self.slot(pkt.group)?;
        ctx.work(ctx.model().c_nic_recv)?;
        let src = slot
            .group
            .local_of(pkt.src)
            .ok_or_else(|| SimError::corruption(format!("BARRIER from non-member {}", pkt.src)))?;
        match slot.state.arrival(&slot.group.schedule, pkt.round, src, pkt.seq)? {
            Arrival::Applied { fresh, enabled } => {
                if fresh {
                    ctx.accept(pkt);
                    rearm(ctx, slot)?;
                }
                send_rounds(ctx, &slot.group, enabled, pkt.seq)?;
                finish_if_complete(ctx, slot)?;
            }
            Arrival::Buffered => ctx.accept(pkt),
            Arrival::Stale => {}
        }
        Ok(())
    }

    /// Sends one NACK per missing bit of the earliest incomplete round and
    /// re-arms the timer.
    pub fn on_receiver_timeout(&mut self, ctx: &mut NicCtx<'_>, group: GroupId, seq: u64) -> Result<(), SimError> {
        let slot = self.slot(group)?;
        if !slot.state.in_progress() || slot.state.current() != seq {
            return Ok(());
        }
        let m = ctx.model();
        let missing = slot.state.tracker().missing(&slot.group.schedule);
        let first = missing.first().map(|&(r, _)| r);
        let mut sent = 0;
        let mut last = ctx.now();
        for (round, peer) in missing.into_iter().filter(|&(r, _)| Some(r) == first) {
            last = ctx.work(m.c_nic_send)?;
            let nack = Packet::nack(ctx.rank(), slot.group.members[peer], group, round, seq);
            ctx.transmit(last, nack, TraceAction::Send)?;
            sent += 1;
        }
        let timer = ctx.timer(last + m.receiver_timeout, Msg::RecvTimeout { group, seq })?;
        if let Some(rec) = slot.record.as_mut() {
            rec.nack_timer = Some(timer);
        }
        self.nacks_sent += sent;
        Ok(())
    }

    /// Regenerates and resends the requested barrier message if this NIC has
    /// already sent it.
    pub fn on_nack(&mut self, ctx: &mut NicCtx<'_>, pkt: &Packet) -> Result<(), SimError> {
        debug_assert_eq!(pkt.kind, PacketKind::Nack);
        let slot = self.slot(pkt.group)?;
        let m = ctx.model();
        ctx.work(m.c_nic_recv)?;
        let current = slot.state.current();
        if pkt.seq > current + 1 {
            return Err(SimError::corruption(format!(
                "rank {}: NACK for barrier {} while at barrier {current}",
                ctx.rank(),
                pkt.seq
            )));
        }
        let peer = slot
            .group
            .local_of(pkt.src)
            .ok_or_else(|| SimError::corruption(format!("NACK from non-member {}", pkt.src)))?;
        let owes = slot.group.schedule.rounds.get(pkt.round).is_some_and(|r| r.send_to.contains(&peer));
        if !owes {
            return Err(SimError::corruption(format!(
                "rank {}: NACK for round {} from {} which this rank never sends to",
                ctx.rank(),
                pkt.round,
                pkt.src
            )));
        }
        let already_sent = pkt.seq < current
            || (pkt.seq == current && (!slot.state.in_progress() || pkt.round < slot.state.tracker().sent_rounds()));
        if !already_sent {
            // The peer is ahead of us; the message goes out when we get there.
            return Ok(());
        }
        let done = ctx.work(m.c_nic_send)?;
        let again = Packet::barrier(ctx.rank(), pkt.src, pkt.group, pkt.round, pkt.seq);
        ctx.transmit(done, again, TraceAction::Retransmit)?;
        self.retransmits += 1;
        Ok(())
    }
}

fn send_rounds(ctx: &mut NicCtx<'_>, group: &BarrierGroup, rounds: std::ops::Range<usize>, seq: u64) -> Result<(), SimError> {
    let c_send = ctx.model().c_nic_send;
    for r in rounds {
        for &dst in &group.schedule.rounds[r].send_to {
            let done = ctx.work(c_send)?;
            let pkt = Packet::barrier(ctx.rank(), group.members[dst], group.group_id, r, seq);
            ctx.transmit(done, pkt, TraceAction::Send)?;
        }
    }
    Ok(())
}

/// Pushes the receiver timeout out after progress: it fires only when no
/// expected message has arrived for a full timeout period.
fn rearm(ctx: &mut NicCtx<'_>, slot: &mut GroupSlot) -> Result<(), SimError> {
    if !slot.state.in_progress() {
        return Ok(());
    }
    let Some(rec) = slot.record.as_mut() else {
        return Ok(());
    };
    if let Some(h) = rec.nack_timer.take() {
        ctx.cancel(h);
    }
    let at = ctx.busy_until() + ctx.model().receiver_timeout;
    rec.nack_timer = Some(ctx.timer(at, Msg::RecvTimeout { group: rec.group_id, seq: rec.seq })?);
    Ok(())
}

fn finish_if_complete(ctx: &mut NicCtx<'_>, slot: &mut GroupSlot) -> Result<(), SimError> {
    if !slot.state.take_completed() {
        return Ok(());
    }
    let seq = slot.state.current();
    if let Some(h) = slot.record.as_mut().and_then(|r| r.nack_timer.take()) {
        ctx.cancel(h);
    }
    let at = ctx.busy_until();
    ctx.notify_host(at, Msg::HostComplete { group: slot.group.group_id, seq })
}
