//! Deterministic discrete-event timeline.
//!
//! Events are ordered by `(fire_at, seq)` where `seq` is a monotone insertion
//! counter, so equal timestamps dispatch in scheduling order. Time is kept in
//! integer picoseconds.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Picoseconds per second.
pub const PS_PER_S: u64 = 1_000_000_000_000;

/// Simulation timestamp or duration in picoseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    /// Converts seconds to picoseconds, rounding to the nearest picosecond.
    /// Returns `None` for negative, non-finite or unrepresentable values.
    pub fn from_secs_f64(secs: f64) -> Option<Self> {
        if !secs.is_finite() || secs < 0.0 {
            return None;
        }
        let ps = (secs * PS_PER_S as f64).round();
        if ps >= u64::MAX as f64 {
            return None;
        }
        Some(SimTime(ps as u64))
    }

    pub fn as_ps(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / PS_PER_S as f64
    }

    pub fn checked_add(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_add(rhs.0).map(SimTime)
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ps", self.0)
    }
}

/// Identifier of a network node (router, BSM station or the manager).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Router(usize),
    Bsm(usize),
    Manager,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Router(i) => write!(f, "r{i}"),
            NodeId::Bsm(i) => write!(f, "b{i}"),
            NodeId::Manager => write!(f, "manager"),
        }
    }
}

/// Handle returned by [`Timeline::schedule`]; usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seq(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so that `BinaryHeap` pops the earliest `(fire_at, seq)` first.
impl<P> Ord for Event<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("fault at {at}: {message}")]
    Fault { at: SimTime, message: String },
}

/// Error raised by an event handler. The timeline attaches the current time.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct Fault(pub String);

impl Fault {
    pub fn new(msg: impl Into<String>) -> Self {
        Fault(msg.into())
    }
}

/// Receives dispatched events.
pub trait Handler<P> {
    fn handle(&mut self, timeline: &mut Timeline<P>, event: Event<P>) -> Result<(), Fault>;
}

/// Bookkeeping counters; at the end of a run
/// `scheduled == dispatched + cancelled + beyond_horizon + pending`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TimelineStats {
    pub scheduled: u64,
    pub dispatched: u64,
    pub cancelled: u64,
    pub beyond_horizon: u64,
}

pub struct Timeline<P> {
    now: SimTime,
    horizon: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Event<P>>,
    live: HashSet<u64>,
    stats: TimelineStats,
    last_dispatched: SimTime,
    seed: u64,
}

impl<P> Timeline<P> {
    pub fn new(horizon: SimTime, seed: u64) -> Self {
        Timeline {
            now: SimTime::ZERO,
            horizon,
            next_seq: 0,
            queue: BinaryHeap::new(),
            live: HashSet::new(),
            stats: TimelineStats::default(),
            last_dispatched: SimTime::ZERO,
            seed,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn horizon(&self) -> SimTime {
        self.horizon
    }

    pub fn stats(&self) -> TimelineStats {
        self.stats
    }

    pub fn pending(&self) -> usize {
        self.live.len()
    }

    /// Independent random stream for `stream`; streams never overlap and do
    /// not depend on how many draws other streams have made.
    pub fn fork_rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn schedule(
        &mut self,
        delay: SimTime,
        target: NodeId,
        payload: P,
    ) -> Result<EventHandle, SimError> {
        let fire_at = self.now.checked_add(delay).ok_or_else(|| {
            SimError::Config(format!("event time overflow: {} + {}", self.now, delay))
        })?;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event {
            fire_at,
            seq,
            target,
            payload,
        });
        self.live.insert(seq);
        self.stats.scheduled += 1;
        Ok(EventHandle(seq))
    }

    /// Returns true iff the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if self.live.remove(&handle.0) {
            self.stats.cancelled += 1;
            true
        } else {
            false
        }
    }

    /// Dispatches every pending event with `fire_at <= horizon` and returns the
    /// time of the last dispatched event.
    pub fn run<H: Handler<P>>(&mut self, handler: &mut H) -> Result<SimTime, SimError> {
        while let Some(head) = self.queue.peek() {
            if !self.live.contains(&head.seq) {
                self.queue.pop();
                continue;
            }
            if head.fire_at > self.horizon {
                break;
            }
            let event = self.queue.pop().expect("peeked");
            self.live.remove(&event.seq);
            debug_assert!(event.fire_at >= self.now);
            self.now = event.fire_at;
            self.last_dispatched = event.fire_at;
            self.stats.dispatched += 1;
            handler.handle(self, event).map_err(|f| SimError::Fault {
                at: self.now,
                message: f.0,
            })?;
        }
        // Whatever is still live lies beyond the horizon.
        self.queue.retain(|e| self.live.contains(&e.seq));
        self.stats.beyond_horizon = self.live.len() as u64;
        Ok(self.last_dispatched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, RngCore};

    #[derive(Default)]
    struct Recorder {
        seen: Vec<(SimTime, u64)>,
    }

    impl Handler<u32> for Recorder {
        fn handle(&mut self, _tl: &mut Timeline<u32>, ev: Event<u32>) -> Result<(), Fault> {
            self.seen.push((ev.fire_at, ev.seq));
            Ok(())
        }
    }

    #[test]
    fn first_insertion_gets_seq_zero() {
        let mut tl = Timeline::new(SimTime(100), 0);
        let h = tl.schedule(SimTime(5), NodeId::Router(0), 0u32).unwrap();
        assert_eq!(h.seq(), 0);
        let mut rec = Recorder::default();
        tl.run(&mut rec).unwrap();
        assert_eq!(rec.seen, vec![(SimTime(5), 0)]);
    }

    struct Chain;
    impl Handler<u32> for Chain {
        fn handle(&mut self, tl: &mut Timeline<u32>, ev: Event<u32>) -> Result<(), Fault> {
            if ev.payload == 0 {
                // now = 5, zero delay: same timestamp, later seq
                tl.schedule(SimTime(0), NodeId::Router(0), 1).unwrap();
            }
            Ok(())
        }
    }

    #[test]
    fn zero_delay_ties_dispatch_after_earlier_seq() {
        let mut tl = Timeline::new(SimTime(100), 0);
        tl.schedule(SimTime(5), NodeId::Router(0), 0u32).unwrap();
        tl.schedule(SimTime(5), NodeId::Router(1), 2u32).unwrap();
        let end = tl.run(&mut Chain).unwrap();
        assert_eq!(end, SimTime(5));
        assert_eq!(tl.stats().dispatched, 3);
    }

    #[test]
    fn random_delays_drain_in_reference_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tl = Timeline::new(SimTime(u64::MAX), 0);
        let mut reference = Vec::new();
        for _ in 0..1000 {
            let d = SimTime(rng.gen_range(0..50));
            let h = tl.schedule(d, NodeId::Bsm(0), 0u32).unwrap();
            reference.push((d, h.seq()));
        }
        reference.sort();
        let mut rec = Recorder::default();
        tl.run(&mut rec).unwrap();
        assert_eq!(rec.seen, reference);
    }

    #[test]
    fn empty_queue_returns_zero() {
        let mut tl: Timeline<u32> = Timeline::new(SimTime(10), 0);
        assert_eq!(tl.run(&mut Recorder::default()).unwrap(), SimTime::ZERO);
    }

    #[test]
    fn horizon_cuts_off_late_events() {
        let mut tl = Timeline::new(SimTime(10), 0);
        tl.schedule(SimTime(7), NodeId::Router(0), 0u32).unwrap();
        assert_eq!(tl.run(&mut Recorder::default()).unwrap(), SimTime(7));

        let mut tl = Timeline::new(SimTime(10), 0);
        tl.schedule(SimTime(11), NodeId::Router(0), 0u32).unwrap();
        let mut rec = Recorder::default();
        assert_eq!(tl.run(&mut rec).unwrap(), SimTime::ZERO);
        assert!(rec.seen.is_empty());
        assert_eq!(tl.stats().beyond_horizon, 1);
    }

    #[test]
    fn cancel_semantics() {
        let mut tl = Timeline::new(SimTime(10), 0);
        let a = tl.schedule(SimTime(3), NodeId::Router(0), 0u32).unwrap();
        let b = tl.schedule(SimTime(4), NodeId::Router(0), 1u32).unwrap();
        assert!(tl.cancel(a));
        assert!(!tl.cancel(a));
        let mut rec = Recorder::default();
        tl.run(&mut rec).unwrap();
        assert_eq!(rec.seen, vec![(SimTime(4), 1)]);
        assert!(!tl.cancel(b));
        let s = tl.stats();
        assert_eq!(s.scheduled, s.dispatched + s.cancelled + s.beyond_horizon);
    }

    #[test]
    fn overflow_is_a_config_error() {
        let mut tl: Timeline<u32> = Timeline::new(SimTime(u64::MAX), 0);
        tl.schedule(SimTime(5), NodeId::Manager, 0).unwrap();
        tl.run(&mut Recorder::default()).unwrap();
        assert!(matches!(
            tl.schedule(SimTime(u64::MAX), NodeId::Manager, 0),
            Err(SimError::Config(_))
        ));
    }

    struct Failing;
    impl Handler<u32> for Failing {
        fn handle(&mut self, _tl: &mut Timeline<u32>, _ev: Event<u32>) -> Result<(), Fault> {
            Err(Fault::new("boom"))
        }
    }

    #[test]
    fn fault_surfaces_current_time() {
        let mut tl = Timeline::new(SimTime(10), 0);
        tl.schedule(SimTime(6), NodeId::Router(0), 0u32).unwrap();
        let err = tl.run(&mut Failing).unwrap_err();
        assert_eq!(
            err,
            SimError::Fault {
                at: SimTime(6),
                message: "boom".into()
            }
        );
    }

    #[test]
    fn horizon_of_ten_thousand_seconds_fits() {
        let t = SimTime::from_secs_f64(1.0e4).unwrap();
        assert_eq!(t.as_ps(), 10_000 * PS_PER_S);
        assert!(t.checked_add(t).is_some());
    }

    #[test]
    fn forked_streams_are_independent_of_each_other() {
        let tl: Timeline<u32> = Timeline::new(SimTime(1), 42);
        let mut a = tl.fork_rng(1);
        let first = a.next_u64();
        let mut b = tl.fork_rng(2);
        for _ in 0..10 {
            b.next_u64();
        }
        let mut a2 = tl.fork_rng(1);
        assert_eq!(a2.next_u64(), first);
    }
}
