//! Barrier sequencing shared by the host, NIC-pt2pt and collective paths.
//!
//! A rank is inside at most one barrier instance per group. Messages for the
//! next instance may arrive early (a peer already exited the current one) and
//! are parked in a one-ahead slot; anything further ahead is impossible
//! under barrier semantics and reported as corruption.

use std::ops::Range;

use crate::error::SimError;
use crate::schedule::{RoundTracker, Schedule};
use crate::topology::Rank;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arrival {
    /// Counted toward the barrier in progress; `enabled` lists rounds whose
    /// sends just became ready.
    Applied { fresh: bool, enabled: Range<usize> },
    /// Parked for the next barrier instance.
    Buffered,
    /// Belongs to an instance this rank already finished.
    Stale,
}

#[derive(Debug, Clone)]
pub struct BarrierState {
    current: u64,
    in_progress: bool,
    tracker: RoundTracker,
    ahead: Vec<(usize, Rank)>,
    completed: bool,
}

impl BarrierState {
    pub fn new(schedule: &Schedule) -> Self {
        BarrierState { current: 0, in_progress: false, tracker: RoundTracker::new(schedule, 0), ahead: Vec::new(), completed: false }
    }

    /// Sequence number of the latest barrier entered (0 before the first).
    pub fn current(&self) -> u64 {
        self.current
    }

    pub fn in_progress(&self) -> bool {
        self.in_progress
    }

    pub fn tracker(&self) -> &RoundTracker {
        &self.tracker
    }

    /// Enters barrier `current + 1` and replays parked arrivals. Returns the
    /// rounds whose sends are ready.
    pub fn start(&mut self, schedule: &Schedule) -> Result<Range<usize>, SimError> {
        if self.in_progress {
            return Err(SimError::Contract(format!(
                "rank {}: barrier {} re-initiated while in progress",
                schedule.me, self.current
            )));
        }
        self.current += 1;
        self.in_progress = true;
        self.tracker = RoundTracker::new(schedule, self.current);
        for (round, src) in std::mem::take(&mut self.ahead) {
            self.tracker
                .record(schedule, round, src)
                .map_err(|e| SimError::corruption(format!("rank {}: {e}", schedule.me)))?;
        }
        let enabled = self.tracker.advance(schedule);
        self.settle();
        Ok(enabled)
    }

    pub fn arrival(&mut self, schedule: &Schedule, round: usize, src: Rank, seq: u64) -> Result<Arrival, SimError> {
        let next = self.current + 1;
        if seq > next {
            return Err(SimError::corruption(format!(
                "rank {}: message for barrier {seq} from {src} while at barrier {}",
                schedule.me, self.current
            )));
        }
        if seq == next {
            if !self.ahead.contains(&(round, src)) {
                let expected = schedule.rounds.get(round).is_some_and(|r| r.await_from.contains(&src));
                if !expected {
                    return Err(SimError::corruption(format!(
                        "rank {}: unexpected round-{round} message from {src}",
                        schedule.me
                    )));
                }
                self.ahead.push((round, src));
            }
            return Ok(Arrival::Buffered);
        }
        if seq < self.current || !self.in_progress {
            return Ok(Arrival::Stale);
        }
        let fresh = self
            .tracker
            .record(schedule, round, src)
            .map_err(|e| SimError::corruption(format!("rank {}: {e}", schedule.me)))?;
        let enabled = self.tracker.advance(schedule);
        self.settle();
        Ok(Arrival::Applied { fresh, enabled })
    }

    /// Returns true exactly once after the barrier in progress completes.
    pub fn take_completed(&mut self) -> bool {
        std::mem::take(&mut self.completed)
    }

    fn settle(&mut self) {
        if self.in_progress && self.tracker.is_complete() {
            self.in_progress = false;
            self.completed = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, AlgorithmKind};

    #[test]
    fn early_message_is_parked_until_start() {
        let s = build_schedule(AlgorithmKind::Dissemination, 2, 0).unwrap();
        let mut b = BarrierState::new(&s);
        assert_eq!(b.arrival(&s, 0, 1, 1).unwrap(), Arrival::Buffered);
        assert_eq!(b.start(&s).unwrap(), 0..1);
        assert!(b.take_completed());
        assert!(!b.take_completed());
        assert!(!b.in_progress());
    }

    #[test]
    fn stale_and_duplicate_arrivals() {
        let s = build_schedule(AlgorithmKind::Dissemination, 4, 0).unwrap();
        let mut b = BarrierState::new(&s);
        b.start(&s).unwrap();
        assert_eq!(b.arrival(&s, 0, 3, 1).unwrap(), Arrival::Applied { fresh: true, enabled: 1..2 });
        assert_eq!(b.arrival(&s, 0, 3, 1).unwrap(), Arrival::Applied { fresh: false, enabled: 2..2 });
        b.arrival(&s, 1, 2, 1).unwrap();
        assert!(b.take_completed());
        assert_eq!(b.arrival(&s, 1, 2, 1).unwrap(), Arrival::Stale);
    }

    #[test]
    fn two_ahead_is_corruption() {
        let s = build_schedule(AlgorithmKind::Dissemination, 4, 0).unwrap();
        let mut b = BarrierState::new(&s);
        b.start(&s).unwrap();
        assert!(matches!(b.arrival(&s, 0, 3, 3), Err(SimError::ProtocolCorruption(_))));
    }

    #[test]
    fn restart_while_in_progress_is_rejected() {
        let s = build_schedule(AlgorithmKind::Dissemination, 4, 0).unwrap();
        let mut b = BarrierState::new(&s);
        b.start(&s).unwrap();
        assert!(matches!(b.start(&s), Err(SimError::Contract(_))));
    }
}
