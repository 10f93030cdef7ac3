use std::fmt;

use serde::{Deserialize, Serialize};

use crate::topology::Rank;

/// Wire header bytes shared by every packet kind.
pub const HEADER_BYTES: u32 = 16;
/// A barrier payload is one integer: the barrier sequence number.
pub const BARRIER_PAYLOAD_BYTES: u32 = 4;

pub type GroupId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PacketKind {
    /// Collective-protocol barrier message, or a zero-byte RDMA on the Elan backend.
    Barrier,
    Nack,
    /// Point-to-point message (carries a barrier message in the pt2pt modes).
    Data,
    Ack,
}

impl PacketKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Barrier => "BARRIER",
            PacketKind::Nack => "NACK",
            PacketKind::Data => "DATA",
            PacketKind::Ack => "ACK",
        }
    }
}

impl fmt::Display for PacketKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A simulated wire unit.
///
/// `seq` is the barrier sequence number. For pt2pt DATA packets `link_seq` is
/// the per-destination link sequence; for ACKs it is the highest in-order
/// link sequence received (cumulative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Packet {
    pub src: Rank,
    pub dst: Rank,
    pub kind: PacketKind,
    pub group: GroupId,
    pub round: usize,
    pub seq: u64,
    pub link_seq: u64,
    pub size: u32,
}

impl Packet {
    pub fn barrier(src: Rank, dst: Rank, group: GroupId, round: usize, seq: u64) -> Self {
        Packet {
            src,
            dst,
            kind: PacketKind::Barrier,
            group,
            round,
            seq,
            link_seq: 0,
            size: HEADER_BYTES + BARRIER_PAYLOAD_BYTES,
        }
    }

    /// Zero-byte remote RDMA: header only.
    pub fn rdma(src: Rank, dst: Rank, group: GroupId, round: usize, seq: u64) -> Self {
        Packet { size: HEADER_BYTES, ..Self::barrier(src, dst, group, round, seq) }
    }

    /// NACK from `src` asking `dst` to resend its (round, seq) barrier message.
    pub fn nack(src: Rank, dst: Rank, group: GroupId, round: usize, seq: u64) -> Self {
        Packet { kind: PacketKind::Nack, ..Self::barrier(src, dst, group, round, seq) }
    }

    pub fn data(src: Rank, dst: Rank, group: GroupId, round: usize, seq: u64, link_seq: u64) -> Self {
        Packet { kind: PacketKind::Data, link_seq, ..Self::barrier(src, dst, group, round, seq) }
    }

    pub fn ack(src: Rank, dst: Rank, link_seq: u64) -> Self {
        Packet {
            src,
            dst,
            kind: PacketKind::Ack,
            group: 0,
            round: 0,
            seq: 0,
            link_seq,
            size: HEADER_BYTES,
        }
    }

    pub fn carries_bulk_payload(&self) -> bool {
        self.size > HEADER_BYTES + BARRIER_PAYLOAD_BYTES
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_packets_are_minimal() {
        assert!(!Packet::barrier(0, 1, 0, 0, 1).carries_bulk_payload());
        assert!(!Packet::nack(0, 1, 0, 0, 1).carries_bulk_payload());
        assert_eq!(Packet::rdma(0, 1, 0, 0, 1).size, HEADER_BYTES);
    }
}
