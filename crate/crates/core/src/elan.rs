//! Barrier as a chain of zero-byte RDMA descriptors (Elan-style backend).
//!
//! The host triggers the chain; every later descriptor fires when the event
//! it waits on has counted enough remote arrivals and the descriptor before
//! it has been issued. No NIC thread, no ACKs, no retransmission: the
//! network is reliable. Consecutive barriers alternate between two event
//! sets by sequence parity.

use crate::error::SimError;
use crate::packet::{GroupId, Packet, PacketKind};
use crate::schedule::Schedule;
use crate::sim::{Msg, NicCtx};
use crate::topology::Rank;
use crate::trace::TraceAction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    HostInitiated,
    OnEvent { event: usize, wait_count: u32 },
    /// Fires as soon as the previous descriptor has been issued.
    Chained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnComplete {
    Next(usize),
    LocalCompletion,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RdmaDescriptor {
    /// Target position within the group.
    pub target: usize,
    pub round: usize,
    pub trigger: Trigger,
    pub on_complete: OnComplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElanEvent {
    pub id: usize,
    pub required_count: u32,
    pub current_count: u32,
    pub fired: bool,
}

impl ElanEvent {
    fn reset(&mut self) {
        self.current_count = 0;
        self.fired = false;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    pub descriptors: Vec<RdmaDescriptor>,
    pub events: Vec<ElanEvent>,
    /// Event that raises the local completion to the host, if any awaits
    /// remain after the last descriptor.
    pub completion_event: Option<usize>,
    event_of_round: Vec<Option<usize>>,
}

impl Chain {
    pub fn event_for_round(&self, round: usize) -> Option<usize> {
        self.event_of_round.get(round).copied().flatten()
    }

    pub fn host_initiated_count(&self) -> usize {
        self.descriptors.iter().filter(|d| d.trigger == Trigger::HostInitiated).count()
    }
}

/// Turns a schedule into descriptors. A descriptor in sending round `r` waits
/// on an event counting every await since the previous sending round.
pub fn build_chain(schedule: &Schedule) -> Chain {
    let mut descriptors = Vec::new();
    let mut events: Vec<ElanEvent> = Vec::new();
    let mut event_of_round = vec![None; schedule.rounds.len()];
    let mut stage_start = 0;
    let mut first = true;

    let mut new_event = |from: usize, to: usize, events: &mut Vec<ElanEvent>| -> Option<usize> {
        let count: usize = schedule.rounds[from..to].iter().map(|r| r.await_from.len()).sum();
        if count == 0 {
            return None;
        }
        let id = events.len();
        events.push(ElanEvent { id, required_count: count as u32, current_count: 0, fired: false });
        for slot in &mut event_of_round[from..to] {
            *slot = Some(id);
        }
        Some(id)
    };

    for (r, round) in schedule.rounds.iter().enumerate() {
        if round.send_to.is_empty() {
            continue;
        }
        let trigger = match new_event(stage_start, r, &mut events) {
            Some(id) => Trigger::OnEvent { event: id, wait_count: events[id].required_count },
            None if first => Trigger::HostInitiated,
            None => Trigger::Chained,
        };
        for (k, &target) in round.send_to.iter().enumerate() {
            // Later descriptors of the same round ride on the same event.
            let trigger = if k == 0 || trigger != Trigger::HostInitiated { trigger } else { Trigger::Chained };
            descriptors.push(RdmaDescriptor { target, round: r, trigger, on_complete: OnComplete::LocalCompletion });
        }
        stage_start = r;
        first = false;
    }
    let completion_event = new_event(stage_start, schedule.rounds.len(), &mut events);
    let len = descriptors.len();
    for (i, d) in descriptors.iter_mut().enumerate() {
        d.on_complete = if i + 1 < len { OnComplete::Next(i + 1) } else { OnComplete::LocalCompletion };
    }
    Chain { descriptors, events, completion_event, event_of_round }
}

#[derive(Debug, Clone)]
pub struct ElanGroup {
    pub group_id: GroupId,
    pub members: Vec<Rank>,
    pub chain: Chain,
    current: u64,
    in_progress: bool,
    next_desc: usize,
    sets: [Vec<ElanEvent>; 2],
    rdmas_issued: u64,
}

impl ElanGroup {
    pub fn new(group_id: GroupId, members: Vec<Rank>, schedule: &Schedule) -> Self {
        let chain = build_chain(schedule);
        let sets = [chain.events.clone(), chain.events.clone()];
        ElanGroup { group_id, members, chain, current: 0, in_progress: false, next_desc: 0, sets, rdmas_issued: 0 }
    }

    pub fn current_seq(&self) -> u64 {
        self.current
    }

    pub fn rdmas_issued(&self) -> u64 {
        self.rdmas_issued
    }

    /// Host trigger: arms the chain for barrier `current + 1`.
    pub fn trigger_barrier(&mut self, ctx: &mut NicCtx<'_>) -> Result<u64, SimError> {
        if self.in_progress {
            return Err(SimError::Contract(format!(
                "rank {}: chain triggered while barrier {} in progress",
                ctx.rank(),
                self.current
            )));
        }
        self.current += 1;
        self.in_progress = true;
        self.next_desc = 0;
        self.progress(ctx)?;
        Ok(self.current)
    }

    pub fn on_rdma(&mut self, ctx: &mut NicCtx<'_>, pkt: &Packet) -> Result<(), SimError> {
        debug_assert_eq!(pkt.kind, PacketKind::Barrier);
        ctx.work(ctx.model().c_nic_recv)?;
        let ahead = pkt.seq == self.current + 1;
        let here = pkt.seq == self.current && self.in_progress;
        if !ahead && !here {
            return Err(SimError::corruption(format!(
                "rank {}: RDMA for barrier {} while at barrier {} (in progress: {})",
                ctx.rank(),
                pkt.seq,
                self.current,
                self.in_progress
            )));
        }
        let event = self.chain.event_for_round(pkt.round).ok_or_else(|| {
            SimError::corruption(format!("rank {}: RDMA for round {} has no event", ctx.rank(), pkt.round))
        })?;
        let ev = &mut self.sets[(pkt.seq % 2) as usize][event];
        if ev.fired {
            return Err(SimError::corruption(format!("rank {}: event {event} fired twice", ctx.rank())));
        }
        ev.current_count += 1;
        if ev.current_count == ev.required_count {
            ev.fired = true;
        }
        ctx.accept(pkt);
        if here {
            self.progress(ctx)?;
        }
        Ok(())
    }

    fn progress(&mut self, ctx: &mut NicCtx<'_>) -> Result<(), SimError> {
        let parity = (self.current % 2) as usize;
        while let Some(d) = self.chain.descriptors.get(self.next_desc) {
            let ready = match d.trigger {
                Trigger::HostInitiated | Trigger::Chained => true,
                Trigger::OnEvent { event, .. } => self.sets[parity][event].fired,
            };
            if !ready {
                break;
            }
            let done = ctx.work(ctx.model().c_nic_send)?;
            let pkt = Packet::rdma(ctx.rank(), self.members[d.target], self.group_id, d.round, self.current);
            ctx.transmit(done, pkt, TraceAction::Send)?;
            self.rdmas_issued += 1;
            self.next_desc += 1;
        }
        let finished = self.next_desc == self.chain.descriptors.len()
            && self.chain.completion_event.is_none_or(|e| self.sets[parity][e].fired);
        if finished {
            self.in_progress = false;
            self.sets[parity].iter_mut().for_each(ElanEvent::reset);
            let at = ctx.busy_until();
            ctx.notify_host(at, Msg::HostComplete { group: self.group_id, seq: self.current })?;
        }
        Ok(())
    }
}
