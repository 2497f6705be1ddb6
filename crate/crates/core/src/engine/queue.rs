//! Future event list ordered by `(fire_time, sequence)`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::types::{RequestId, SessionId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    SessionArrival,
    /// The request reaches its tier.
    RequestDispatch {
        request: RequestId,
    },
    ServiceCompletion {
        request: RequestId,
    },
    ThinkExpiry {
        session: SessionId,
    },
    ClientTimeout {
        session: SessionId,
        request: RequestId,
    },
    /// Control tick of the admission policy; stale generations are ignored.
    ControlTick {
        generation: u64,
    },
    SlaTick,
    /// The arrival rate changes; the arrival process redraws from here.
    ProfileChange,
    /// Time-series sampling point.
    SampleTick,
    WarmupEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub fire_time: SimTime,
    pub sequence: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.fire_time
            .cmp(&other.fire_time)
            .then(self.sequence.cmp(&other.sequence))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    now: SimTime,
    next_sequence: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules `kind` at `at`. Times before the clock, or not finite, are rejected.
    pub fn schedule(&mut self, at: SimTime, kind: EventKind) -> Result<()> {
        if at < self.now || !at.is_finite() {
            return Err(Error::Consistency {
                time: self.now.secs(),
                message: format!("event {kind:?} scheduled at {at}, before the clock"),
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Reverse(Event {
            fire_time: at,
            sequence,
            kind,
        }));
        Ok(())
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(e)| e.fire_time)
    }

    /// Removes the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<Event> {
        let Reverse(event) = self.heap.pop()?;
        self.now = event.fire_time;
        Some(event)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: f64) -> SimTime {
        SimTime::from_secs(s)
    }

    #[test]
    fn ties_pop_in_insertion_order() {
        let mut q = EventQueue::new();
        q.schedule(t(2.0), EventKind::SlaTick).unwrap();
        q.schedule(t(1.0), EventKind::SampleTick).unwrap();
        q.schedule(t(1.0), EventKind::ProfileChange).unwrap();
        q.schedule(t(1.0), EventKind::WarmupEnd).unwrap();
        let kinds: Vec<EventKind> = std::iter::from_fn(|| q.pop().map(|e| e.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                EventKind::SampleTick,
                EventKind::ProfileChange,
                EventKind::WarmupEnd,
                EventKind::SlaTick
            ]
        );
        assert_eq!(q.now(), t(2.0));
    }

    #[test]
    fn past_events_are_refused() {
        let mut q = EventQueue::new();
        q.schedule(t(5.0), EventKind::SlaTick).unwrap();
        q.pop();
        assert!(q.schedule(t(4.0), EventKind::SlaTick).is_err());
        assert!(q.schedule(t(5.0), EventKind::SlaTick).is_ok());
        assert!(q.schedule(SimTime::NEVER, EventKind::SlaTick).is_err());
    }
}
