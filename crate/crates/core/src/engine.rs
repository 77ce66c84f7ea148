//! Discrete-event core: a virtual clock and a min-heap of timestamped events.

use alloc::collections::BinaryHeap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimClock {
    now: f64,
}

impl SimClock {
    pub fn now(&self) -> f64 {
        self.now
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    QueryArrival { query: u64 },
    BatchStart { worker: u32 },
    BatchComplete { worker: u32 },
    ControlTick { tick: u32 },
    TraceEnd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError<E> {
    #[error("event at {time} scheduled before now = {now}")]
    Causality { time: f64, now: f64 },
    #[error("end time {end} is before now = {now}")]
    EndInPast { end: f64, now: f64 },
    #[error("handler failed on event #{seq} at t={time} ({event}): {source}")]
    Handler { time: f64, seq: u64, event: String, source: E },
}

/// Heap entry ordered so the earliest `(time, seq)` pops first.
#[derive(Debug)]
struct Entry(Event);

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.time.total_cmp(&self.0.time).then(other.0.seq.cmp(&self.0.seq))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Entry>,
    clock: SimClock,
    next_seq: u64,
    log: Option<Vec<Event>>,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps a copy of every processed event, for replay comparisons.
    pub fn with_log() -> Self {
        Self { log: Some(Vec::new()), ..Self::default() }
    }

    pub fn now(&self) -> f64 {
        self.clock.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn log(&self) -> Option<&[Event]> {
        self.log.as_deref()
    }

    pub fn take_log(&mut self) -> Option<Vec<Event>> {
        self.log.take()
    }

    pub fn schedule<E>(&mut self, time: f64, kind: EventKind) -> Result<u64, EngineError<E>> {
        // Also rejects NaN.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(time >= self.clock.now) {
            return Err(EngineError::Causality { time, now: self.clock.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(Event { time, seq, kind }));
        Ok(seq)
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.0.time)
    }

    /// Removes the next event and advances the clock to it.
    pub fn pop(&mut self) -> Option<Event> {
        let Entry(event) = self.heap.pop()?;
        self.clock.now = event.time;
        if let Some(log) = &mut self.log {
            log.push(event);
        }
        Some(event)
    }

    /// Processes events with `time <= end` in order, handing each to
    /// `handler`, and returns how many were processed. Afterwards the clock
    /// reads `end` when `end` is finite.
    pub fn run_until<E, F>(&mut self, end: f64, mut handler: F) -> Result<u64, EngineError<E>>
    where
        F: FnMut(&mut EventQueue, Event) -> Result<(), E>,
    {
        if end < self.clock.now {
            return Err(EngineError::EndInPast { end, now: self.clock.now });
        }
        let mut processed = 0;
        while self.peek_time().is_some_and(|t| t <= end) {
            let event = self.pop().expect("peeked");
            handler(self, event).map_err(|source| EngineError::Handler {
                time: event.time,
                seq: event.seq,
                event: alloc::format!("{:?}", event.kind),
                source,
            })?;
            processed += 1;
        }
        if end.is_finite() {
            self.clock.now = end;
        }
        Ok(processed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type R = Result<(), &'static str>;

    #[test]
    fn equal_times_pop_in_sequence_order() {
        let mut q = EventQueue::new();
        q.schedule::<()>(1.0, EventKind::TraceEnd).unwrap();
        q.schedule::<()>(1.0, EventKind::ControlTick { tick: 0 }).unwrap();
        assert_eq!(q.pop().unwrap().kind, EventKind::TraceEnd);
        assert_eq!(q.pop().unwrap().kind, EventKind::ControlTick { tick: 0 });
    }

    #[test]
    fn scheduling_at_now_is_legal_but_past_is_not() {
        let mut q = EventQueue::new();
        q.schedule::<()>(2.0, EventKind::TraceEnd).unwrap();
        q.pop();
        q.schedule::<()>(2.0, EventKind::TraceEnd).unwrap();
        assert_eq!(q.pop().unwrap().time, 2.0);
        assert!(matches!(
            q.schedule::<()>(1.0, EventKind::TraceEnd),
            Err(EngineError::Causality { .. })
        ));
    }

    #[test]
    fn run_until_counts_and_sets_clock() {
        let mut q = EventQueue::new();
        assert_eq!(q.run_until(5.0, |_, _| -> R { Ok(()) }).unwrap(), 0);
        assert_eq!(q.now(), 5.0);
        for t in [6.0, 7.0, 8.0, 20.0] {
            q.schedule::<()>(t, EventKind::TraceEnd).unwrap();
        }
        assert_eq!(q.run_until(10.0, |_, _| -> R { Ok(()) }).unwrap(), 3);
        assert_eq!(q.now(), 10.0);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn handler_error_names_the_event() {
        let mut q = EventQueue::new();
        q.schedule::<()>(1.5, EventKind::BatchStart { worker: 3 }).unwrap();
        let err = q.run_until(2.0, |_, _| -> R { Err("boom") }).unwrap_err();
        match err {
            EngineError::Handler { time, seq, event, source } => {
                assert_eq!((time, seq, source), (1.5, 0, "boom"));
                assert!(event.contains("BatchStart"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn handlers_can_schedule_follow_ups() {
        let mut q = EventQueue::with_log();
        q.schedule::<()>(0.0, EventKind::ControlTick { tick: 0 }).unwrap();
        let n = q
            .run_until(100.0, |q, ev| -> Result<(), EngineError<()>> {
                if let EventKind::ControlTick { tick } = ev.kind {
                    if tick < 4 {
                        q.schedule(ev.time + 10.0, EventKind::ControlTick { tick: tick + 1 })?;
                    }
                }
                Ok(())
            })
            .unwrap();
        assert_eq!(n, 5);
        assert_eq!(q.log().unwrap().len(), 5);
    }

    proptest! {
        #[test]
        fn processed_log_is_strictly_ordered(times in prop::collection::vec(0.0f64..100.0, 0..200)) {
            let mut q = EventQueue::with_log();
            for t in &times {
                q.schedule::<()>(*t, EventKind::TraceEnd).unwrap();
            }
            q.run_until(f64::INFINITY, |_, _| -> R { Ok(()) }).unwrap();
            let log = q.log().unwrap();
            prop_assert_eq!(log.len(), times.len());
            for w in log.windows(2) {
                prop_assert!((w[0].time, w[0].seq) < (w[1].time, w[1].seq));
            }
        }
    }
}
