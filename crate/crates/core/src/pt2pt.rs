//! MCP-like point-to-point machinery at the NIC.
//!
//! Sends are queued per destination and served round-robin. Each transmitted
//! packet holds a send record (and one buffer from a bounded pool) until a
//! cumulative ACK covers it; unacknowledged packets are retransmitted on
//! timeout. Receivers accept only the next expected link sequence number and
//! drop anything else.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::engine::EventHandle;
use crate::error::SimError;
use crate::packet::{GroupId, Packet, PacketKind, BARRIER_PAYLOAD_BYTES};
use crate::sim::{Msg, NicCtx};
use crate::time::SimTime;
use crate::topology::Rank;
use crate::trace::TraceAction;

pub const DEFAULT_PACKET_POOL: usize = 4;
pub const DEFAULT_RETRY_LIMIT: u32 = 100;

/// What a barrier message says: group, round and barrier sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BarrierMsg {
    pub group: GroupId,
    pub round: usize,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenState {
    Queued,
    Sending,
    AwaitingAcks,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendToken {
    pub dst: Rank,
    pub length: u32,
    pub state: TokenState,
    pub msg: BarrierMsg,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendRecord {
    pub dst: Rank,
    pub seq: u64,
    pub sent_at: SimTime,
    pub retries: u32,
    pub token: SendToken,
    timer: Option<EventHandle>,
}

#[derive(Debug, Clone, Default)]
struct DestQueue {
    tokens: VecDeque<SendToken>,
}

#[derive(Debug, Clone)]
pub struct NicPt2ptState {
    queues: Vec<DestQueue>,
    queue_of: HashMap<Rank, usize>,
    cursor: usize,
    next_link_seq: HashMap<Rank, u64>,
    expected: HashMap<Rank, u64>,
    records: BTreeMap<(Rank, u64), SendRecord>,
    free_packets: usize,
    pool_capacity: usize,
    acks: bool,
    queue_passes: u64,
    retransmits: u64,
}

impl NicPt2ptState {
    pub fn new(pool_capacity: usize, acks: bool) -> Self {
        assert!(pool_capacity >= 1, "send-packet pool needs at least one packet");
        NicPt2ptState {
            queues: Vec::new(),
            queue_of: HashMap::new(),
            cursor: 0,
            next_link_seq: HashMap::new(),
            expected: HashMap::new(),
            records: BTreeMap::new(),
            free_packets: pool_capacity,
            pool_capacity,
            acks,
            queue_passes: 0,
            retransmits: 0,
        }
    }

    pub fn free_packets(&self) -> usize {
        self.free_packets
    }

    pub fn in_flight(&self) -> usize {
        self.records.len()
    }

    pub fn queued(&self) -> usize {
        self.queues.iter().map(|q| q.tokens.len()).sum()
    }

    pub fn queue_passes(&self) -> u64 {
        self.queue_passes
    }

    pub fn retransmits(&self) -> u64 {
        self.retransmits
    }

    /// Expected next link sequence number from `src`.
    pub fn expected_from(&self, src: Rank) -> u64 {
        self.expected.get(&src).copied().unwrap_or(1)
    }

    /// Queues a send descriptor for `dst` and lets the scheduler run.
    pub fn post_send(&mut self, ctx: &mut NicCtx<'_>, dst: Rank, msg: BarrierMsg) -> Result<(), SimError> {
        let idx = match self.queue_of.get(&dst) {
            Some(&i) => i,
            None => {
                self.queues.push(DestQueue { tokens: VecDeque::new() });
                self.queue_of.insert(dst, self.queues.len() - 1);
                self.queues.len() - 1
            }
        };
        self.queues[idx].tokens.push_back(SendToken {
            dst,
            length: BARRIER_PAYLOAD_BYTES,
            state: TokenState::Queued,
            msg,
        });
        self.pump(ctx)
    }

    /// Serves queued tokens round-robin while send packets are available.
    /// Each inspected queue costs one queue pass.
    fn pump(&mut self, ctx: &mut NicCtx<'_>) -> Result<(), SimError> {
        while self.free_packets > 0 {
            let n = self.queues.len();
            let Some(offset) = (0..n).find(|k| !self.queues[(self.cursor + k) % n].tokens.is_empty()) else {
                break;
            };
            let idx = (self.cursor + offset) % n;
            let passes = offset as u64 + 1;
            self.queue_passes += passes;
            self.cursor = (idx + 1) % n;
            let mut token = self.queues[idx].tokens.pop_front().expect("nonempty queue");
            token.state = TokenState::Sending;
            self.free_packets -= 1;

            let m = ctx.model();
            let cost = m.c_queue_pass.checked_mul(passes).and_then(|q| q.checked_add(m.c_pkt_alloc)).and_then(|q| q.checked_add(m.c_nic_send));
            let done = ctx.work(cost.ok_or(crate::engine::EngineError::TimeOverflow)?)?;

            let link_seq = {
                let s = self.next_link_seq.entry(token.dst).or_insert(0);
                *s += 1;
                *s
            };
            let pkt = Packet::data(ctx.rank(), token.dst, token.msg.group, token.msg.round, token.msg.seq, link_seq);
            ctx.transmit(done, pkt, TraceAction::Send)?;
            if self.acks {
                token.state = TokenState::AwaitingAcks;
                let timer = ctx.timer(done + ctx.model().sender_timeout, Msg::SendTimeout { dst: token.dst, link_seq })?;
                self.records.insert(
                    (token.dst, link_seq),
                    SendRecord { dst: token.dst, seq: link_seq, sent_at: done, retries: 0, token, timer: Some(timer) },
                );
            } else {
                token.state = TokenState::Done;
                self.free_packets += 1;
            }
        }
        Ok(())
    }

    /// Handles an arriving DATA packet. Returns the delivered message and the
    /// time its bookkeeping finished, or `None` if the packet was dropped.
    pub fn on_data(&mut self, ctx: &mut NicCtx<'_>, pkt: &Packet) -> Result<Option<(BarrierMsg, SimTime)>, SimError> {
        debug_assert_eq!(pkt.kind, PacketKind::Data);
        let m = ctx.model();
        ctx.work(m.c_nic_recv)?;
        let expected = self.expected.entry(pkt.src).or_insert(1);
        if pkt.link_seq == *expected {
            *expected += 1;
            let acked = pkt.link_seq;
            let recorded = ctx.work(m.c_record)?;
            ctx.accept(pkt);
            if self.acks {
                let sent = ctx.work(m.c_nic_send)?;
                ctx.transmit(sent, Packet::ack(ctx.rank(), pkt.src, acked), TraceAction::Send)?;
            }
            let msg = BarrierMsg { group: pkt.group, round: pkt.round, seq: pkt.seq };
            Ok(Some((msg, recorded)))
        } else if pkt.link_seq < *expected && self.acks {
            // Duplicate: our ACK was lost or late. Re-acknowledge, deliver nothing.
            let acked = *expected - 1;
            let sent = ctx.work(m.c_nic_send)?;
            ctx.transmit(sent, Packet::ack(ctx.rank(), pkt.src, acked), TraceAction::Send)?;
            Ok(None)
        } else {
            Ok(None)
        }
    }

    /// Releases every record to `pkt.src` covered by the cumulative ACK.
    pub fn on_ack(&mut self, ctx: &mut NicCtx<'_>, pkt: &Packet) -> Result<(), SimError> {
        ctx.work(ctx.model().c_nic_recv)?;
        let covered: Vec<(Rank, u64)> = self
            .records
            .range((pkt.src, 0)..=(pkt.src, pkt.link_seq))
            .map(|(k, _)| *k)
            .collect();
        for key in covered {
            let mut rec = self.records.remove(&key).expect("record present");
            if let Some(h) = rec.timer.take() {
                ctx.cancel(h);
            }
            rec.token.state = TokenState::Done;
            self.free_packets += 1;
        }
        debug_assert!(self.free_packets <= self.pool_capacity);
        self.pump(ctx)
    }

    pub fn on_timeout(&mut self, ctx: &mut NicCtx<'_>, dst: Rank, link_seq: u64, retry_limit: u32) -> Result<(), SimError> {
        let Some(rec) = self.records.get_mut(&(dst, link_seq)) else {
            return Ok(());
        };
        rec.retries += 1;
        if rec.retries > retry_limit {
            return Err(SimError::RetryLimit { rank: ctx.rank(), dst, link_seq, limit: retry_limit });
        }
        let done = ctx.work(ctx.model().c_nic_send)?;
        let msg = rec.token.msg;
        let pkt = Packet::data(ctx.rank(), dst, msg.group, msg.round, msg.seq, link_seq);
        ctx.transmit(done, pkt, TraceAction::Retransmit)?;
        rec.sent_at = done;
        rec.timer = Some(ctx.timer(done + ctx.model().sender_timeout, Msg::SendTimeout { dst, link_seq })?);
        self.retransmits += 1;
        Ok(())
    }
}
