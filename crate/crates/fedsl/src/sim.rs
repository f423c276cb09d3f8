//! Deterministic discrete-event engine: virtual clock, priority queue with
//! stable FIFO tie-breaking, and an optional event trace.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::ControlFlow;

use crate::error::{Error, Result};

pub use crate::rng::{rng_stream, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    ComputeDone,
    UplinkDone,
    DownlinkDone,
    AggregationDue,
    DistillDue,
    EvalDue,
    Timeout,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::ComputeDone => "ComputeDone",
            EventKind::UplinkDone => "UplinkDone",
            EventKind::DownlinkDone => "DownlinkDone",
            EventKind::AggregationDue => "AggregationDue",
            EventKind::DistillDue => "DistillDue",
            EventKind::EvalDue => "EvalDue",
            EventKind::Timeout => "Timeout",
        }
    }
}

/// A scheduled occurrence. `seq` is the insertion counter used for stable
/// ordering at equal timestamps.
#[derive(Debug)]
pub struct Event<P> {
    pub time_s: f64,
    pub seq: u64,
    pub kind: EventKind,
    pub subject: u64,
    pub payload: P,
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.time_s == other.0.time_s && self.0.seq == other.0.seq
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want earliest (time, seq) first.
        other
            .0
            .time_s
            .total_cmp(&self.0.time_s)
            .then(other.0.seq.cmp(&self.0.seq))
    }
}

/// Stop condition for [`Engine::run_until`].
#[derive(Debug, Clone, Copy)]
pub enum Stop {
    /// Process events with `time_s <= budget`; later events stay queued.
    TimeBudget(f64),
    /// Run until the queue drains.
    QueueEmpty,
}

/// One processed-event trace line: (time_s, kind, subject).
pub type TraceLine = (f64, EventKind, u64);

/// Single-threaded simulation engine. Parallelism exists only across
/// engine instances; instances share nothing.
pub struct Engine<P> {
    clock: f64,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
    trace: Option<Vec<TraceLine>>,
}

impl<P> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Engine<P> {
    pub fn new() -> Self {
        Engine {
            clock: 0.0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            trace: None,
        }
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Records (time, kind, subject) for every processed event.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[TraceLine]> {
        self.trace.as_deref()
    }

    /// Renders the trace as `time_s,kind,subject` lines.
    pub fn trace_dump(&self) -> String {
        let mut out = String::new();
        if let Some(lines) = &self.trace {
            for (t, k, s) in lines {
                out.push_str(&format!("{},{},{}\n", t, k.name(), s));
            }
        }
        out
    }

    /// Enqueues an event; ordering key is (time_s, insertion seq).
    pub fn schedule(&mut self, time_s: f64, kind: EventKind, subject: u64, payload: P) -> Result<()> {
        if !time_s.is_finite() {
            return Err(Error::Sim(format!("event time {time_s} is not finite")));
        }
        if time_s < self.clock {
            return Err(Error::Sim(format!(
                "past-dated event at {time_s} (clock {})",
                self.clock
            )));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event {
            time_s,
            seq,
            kind,
            subject,
            payload,
        }));
        Ok(())
    }

    /// Processes events in (time, seq) order until the stop condition, the
    /// queue drains, or the handler breaks. Returns the final clock.
    pub fn run_until<H>(&mut self, stop: Stop, mut handler: H) -> Result<f64>
    where
        H: FnMut(&mut Engine<P>, Event<P>) -> Result<ControlFlow<()>>,
    {
        loop {
            let next_time = match self.queue.peek() {
                None => break,
                Some(q) => q.0.time_s,
            };
            if let Stop::TimeBudget(budget) = stop {
                if next_time > budget {
                    break;
                }
            }
            let ev = self.queue.pop().expect("peeked nonempty queue").0;
            debug_assert!(ev.time_s >= self.clock, "event popped out of order");
            self.clock = ev.time_s;
            if let Some(trace) = &mut self.trace {
                trace.push((ev.time_s, ev.kind, ev.subject));
            }
            match handler(self, ev)? {
                ControlFlow::Continue(()) => {}
                ControlFlow::Break(()) => break,
            }
        }
        Ok(self.clock)
    }
}
