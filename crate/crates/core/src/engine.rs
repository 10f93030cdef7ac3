//! Single-threaded discrete-event engine.
//!
//! Events are dispatched in nondecreasing `fire_at` order; simultaneous events
//! fire in insertion order. Cancelled events are skipped lazily when popped.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use thiserror::Error;

use crate::time::SimTime;

/// Default dispatch budget before the engine assumes a livelock.
pub const DEFAULT_EVENT_BUDGET: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

/// Cancellation handle returned by [`Engine::schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: EntityId,
    pub payload: P,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("event scheduled in the past: at {at} but now is {now}")]
    ScheduleInPast { at: SimTime, now: SimTime },
    #[error("simulated time overflow")]
    TimeOverflow,
    #[error("event budget of {budget} dispatches exceeded at {now}; likely livelock")]
    BudgetExceeded { budget: u64, now: SimTime },
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    // BinaryHeap is a max-heap; invert so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_at, other.0.seq).cmp(&(self.0.fire_at, self.0.seq))
    }
}

pub struct Engine<P> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
    pending: HashSet<u64>,
    dispatched: u64,
    budget: u64,
}

impl<P> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Engine<P> {
    pub fn new() -> Self {
        Self::with_budget(DEFAULT_EVENT_BUDGET)
    }

    pub fn with_budget(budget: u64) -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            pending: HashSet::new(),
            dispatched: 0,
            budget,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn schedule(&mut self, at: SimTime, target: EntityId, payload: P) -> Result<EventHandle, EngineError> {
        if at < self.now {
            return Err(EngineError::ScheduleInPast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.insert(seq);
        self.queue.push(Queued(Event { fire_at: at, seq, target, payload }));
        Ok(EventHandle(seq))
    }

    /// Schedules `delay` after the current time.
    pub fn schedule_in(&mut self, delay: SimTime, target: EntityId, payload: P) -> Result<EventHandle, EngineError> {
        let at = self.now.checked_add(delay).ok_or(EngineError::TimeOverflow)?;
        self.schedule(at, target, payload)
    }

    /// Returns true iff the event had not fired (and was not already cancelled).
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.pending.remove(&handle.0)
    }

    /// Pops the next live event and advances the clock to it.
    pub fn pop(&mut self) -> Result<Option<Event<P>>, EngineError> {
        while let Some(Queued(ev)) = self.queue.pop() {
            if !self.pending.remove(&ev.seq) {
                continue;
            }
            if self.dispatched >= self.budget {
                return Err(EngineError::BudgetExceeded { budget: self.budget, now: self.now });
            }
            self.dispatched += 1;
            debug_assert!(ev.fire_at >= self.now);
            self.now = ev.fire_at;
            return Ok(Some(ev));
        }
        Ok(None)
    }

    /// Dispatches events to `handler` until the queue drains. Returns the fire
    /// time of the last dispatched event (zero if none fired).
    pub fn run_until_idle<E, F>(&mut self, mut handler: F) -> Result<SimTime, E>
    where
        E: From<EngineError>,
        F: FnMut(&mut Engine<P>, Event<P>) -> Result<(), E>,
    {
        let mut last = SimTime::ZERO;
        while let Some(ev) = self.pop()? {
            last = ev.fire_at;
            handler(self, ev)?;
        }
        Ok(last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn us(x: u64) -> SimTime {
        SimTime::from_nanos(x * 1000)
    }

    fn drain(engine: &mut Engine<u32>) -> Vec<(u64, u32)> {
        let mut log = Vec::new();
        engine
            .run_until_idle::<EngineError, _>(|_, ev| {
                log.push((ev.fire_at.as_nanos(), ev.payload));
                Ok(())
            })
            .unwrap();
        log
    }

    #[test]
    fn earlier_events_fire_first() {
        let mut e = Engine::new();
        e.schedule(us(3), EntityId(0), 1).unwrap();
        e.schedule(SimTime::ZERO, EntityId(0), 2).unwrap();
        assert_eq!(drain(&mut e), vec![(0, 2), (3000, 1)]);
    }

    #[test]
    fn ties_fire_in_insertion_order() {
        let mut e = Engine::new();
        for p in 0..5 {
            e.schedule(us(1), EntityId(p), p).unwrap();
        }
        let order: Vec<u32> = drain(&mut e).into_iter().map(|(_, p)| p).collect();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn cancelled_event_never_dispatches() {
        let mut e = Engine::new();
        let a = e.schedule(us(1), EntityId(0), 10).unwrap();
        e.schedule(us(2), EntityId(0), 20).unwrap();
        assert!(e.cancel(a));
        assert!(!e.cancel(a));
        assert_eq!(drain(&mut e), vec![(2000, 20)]);
    }

    #[test]
    fn cancel_after_fire_is_false() {
        let mut e = Engine::new();
        let a = e.schedule(us(1), EntityId(0), 10).unwrap();
        drain(&mut e);
        assert!(!e.cancel(a));
    }

    #[test]
    fn scheduling_in_the_past_fails() {
        let mut e = Engine::new();
        e.schedule(us(5), EntityId(0), 0).unwrap();
        e.pop().unwrap();
        assert_eq!(
            e.schedule(us(4), EntityId(0), 1),
            Err(EngineError::ScheduleInPast { at: us(4), now: us(5) })
        );
        // scheduling at exactly now is allowed
        assert!(e.schedule(us(5), EntityId(0), 1).is_ok());
    }

    #[test]
    fn run_until_idle_returns_last_fire_time() {
        let mut e: Engine<u32> = Engine::new();
        assert_eq!(e.run_until_idle::<EngineError, _>(|_, _| Ok(())).unwrap(), SimTime::ZERO);

        e.schedule(us(5), EntityId(0), 0).unwrap();
        assert_eq!(e.run_until_idle::<EngineError, _>(|_, _| Ok(())).unwrap(), us(5));
    }

    #[test]
    fn self_rescheduling_chain() {
        let k = 17u32;
        let step = SimTime::from_nanos(750);
        let mut e = Engine::new();
        e.schedule(SimTime::ZERO, EntityId(0), 0u32).unwrap();
        let end = e
            .run_until_idle::<EngineError, _>(|eng, ev| {
                if ev.payload < k {
                    eng.schedule_in(step, ev.target, ev.payload + 1)?;
                }
                Ok(())
            })
            .unwrap();
        assert_eq!(end.as_nanos(), u64::from(k) * 750);
    }

    #[test]
    fn budget_exhaustion_signals_livelock() {
        let mut e = Engine::with_budget(100);
        e.schedule(SimTime::ZERO, EntityId(0), 0u32).unwrap();
        let err = e
            .run_until_idle::<EngineError, _>(|eng, ev| {
                eng.schedule_in(SimTime::from_nanos(1), ev.target, 0)?;
                Ok(())
            })
            .unwrap_err();
        assert!(matches!(err, EngineError::BudgetExceeded { budget: 100, .. }));
    }
}
