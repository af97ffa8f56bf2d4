//! Deterministic discrete-event engine: virtual clock, ordered event queue,
//! seeded randomness.
//!
//! Events with equal fire times are executed in insertion order, so a run is
//! fully determined by the scenario and the seed. All timestamps are integer
//! nanoseconds; there is no floating-point time anywhere in the engine.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

/// Nanoseconds since simulation start.
///
/// Arithmetic saturates instead of wrapping: a saturated timestamp is
/// effectively "never", which is the right behavior for timers pushed past
/// the end of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }
    pub const fn from_micros(us: u64) -> Self {
        SimTime(us.saturating_mul(1_000))
    }
    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms.saturating_mul(1_000_000))
    }
    pub const fn from_secs(s: u64) -> Self {
        SimTime(s.saturating_mul(1_000_000_000))
    }
    /// Seconds as float, for metric output only (never fed back into the clock).
    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }
    pub const fn nanos(self) -> u64 {
        self.0
    }

    pub const fn saturating_add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
    pub const fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
    pub const fn saturating_mul(self, k: u64) -> SimTime {
        SimTime(self.0.saturating_mul(k))
    }
    /// Integer division of a duration, used for fractions of an RTT.
    pub const fn div(self, k: u64) -> SimTime {
        SimTime(self.0 / k)
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        self.saturating_add(rhs)
    }
}

impl std::ops::Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        self.saturating_sub(rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Identifies a scheduled event so it can be cancelled before it fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

/// Counts of what happened during a `run_until`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunSummary {
    pub executed: u64,
    pub cancelled: u64,
    /// Events still queued past the horizon when the run stopped.
    pub remaining: u64,
    pub final_clock: SimTime,
}

struct Entry<E> {
    fire_at: SimTime,
    seq: u64,
    payload: E,
    cancelled: bool,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}
impl<E> Eq for Entry<E> {}
impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse to pop the earliest (fire_at, seq).
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// Ordered event queue with a virtual clock.
///
/// `(fire_at, seq)` totally orders all events; `seq` is the insertion
/// sequence, so same-time events fire FIFO.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    now: SimTime,
    next_seq: u64,
    executed: u64,
    cancelled_pending: u64,
    cancelled_total: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            executed: 0,
            cancelled_pending: 0,
            cancelled_total: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Schedule `payload` to fire at exactly `t`.
    ///
    /// Panics if `t` is in the past: that is a programming error in a handler,
    /// and continuing would silently reorder the run.
    pub fn schedule(&mut self, t: SimTime, payload: E) -> EventHandle {
        assert!(
            t >= self.now,
            "schedule in the past: t={} now={}",
            t,
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry {
            fire_at: t,
            seq,
            payload,
            cancelled: false,
        });
        EventHandle(seq)
    }

    /// Schedule relative to the current clock.
    pub fn schedule_in(&mut self, dt: SimTime, payload: E) -> EventHandle {
        self.schedule(self.now.saturating_add(dt), payload)
    }

    /// Cancel a pending event. Returns false if it already fired or was
    /// already cancelled. O(n) over the pending set; cancellation is rare
    /// (timer races), so this does not show up in profiles.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        let mut hit = false;
        // BinaryHeap has no in-place lookup; mark via rebuild of the one entry.
        let mut entries: Vec<Entry<E>> = std::mem::take(&mut self.heap).into_vec();
        for e in &mut entries {
            if e.seq == handle.0 && !e.cancelled {
                e.cancelled = true;
                hit = true;
                break;
            }
        }
        self.heap = entries.into();
        if hit {
            self.cancelled_pending += 1;
            self.cancelled_total += 1;
        }
        hit
    }

    /// Pop the next live event with `fire_at <= t_end`, advancing the clock
    /// to its fire time. Returns `None` once the queue holds nothing at or
    /// before the horizon; the clock is then advanced to `t_end`.
    pub fn pop_next_until(&mut self, t_end: SimTime) -> Option<(SimTime, E)> {
        loop {
            match self.heap.peek() {
                Some(e) if e.fire_at <= t_end => {
                    let e = self.heap.pop().expect("peeked");
                    if e.cancelled {
                        self.cancelled_pending -= 1;
                        continue;
                    }
                    debug_assert!(e.fire_at >= self.now, "clock went backwards");
                    self.now = e.fire_at;
                    self.executed += 1;
                    return Some((e.fire_at, e.payload));
                }
                _ => {
                    if t_end > self.now && t_end != SimTime::MAX {
                        self.now = t_end;
                    }
                    return None;
                }
            }
        }
    }

    /// Drain and dispatch events through `handler` until the horizon.
    ///
    /// The handler receives the queue itself so it can schedule follow-up
    /// events; all protocol logic runs on this single thread.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> RunSummary
    where
        F: FnMut(&mut Self, SimTime, E),
    {
        let executed_before = self.executed;
        let cancelled_before = self.cancelled_total;
        while let Some((t, payload)) = self.pop_next_until(t_end) {
            handler(self, t, payload);
        }
        RunSummary {
            executed: self.executed - executed_before,
            cancelled: self.cancelled_total - cancelled_before,
            remaining: self.heap.len() as u64 - self.cancelled_pending,
            final_clock: self.now,
        }
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn pending(&self) -> u64 {
        self.heap.len() as u64 - self.cancelled_pending
    }
}

/// Deterministic RNG with a single 64-bit state (xorshift64*).
///
/// Identical (seed, stream label) yields identical sequences on every
/// platform. Each (node, protocol) pair gets its own substream so adding a
/// flow never perturbs another flow's draws.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimRng {
    state: u64,
}

/// SplitMix64 step, used to spread seed bits and derive substreams.
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over a label, for substream derivation from component names.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

impl SimRng {
    /// Root RNG for a run. Zero seeds are remapped to avoid the xorshift
    /// lockup state.
    pub fn new(seed: u64) -> Self {
        let s = splitmix64(seed);
        SimRng {
            state: if s == 0 { 0x9E37_79B9_7F4A_7C15 } else { s },
        }
    }

    /// Derive an independent substream identified by a component label.
    pub fn substream(&self, stream_id: &str) -> SimRng {
        let s = splitmix64(self.state ^ fnv1a(stream_id.as_bytes()));
        SimRng {
            state: if s == 0 { 0x9E37_79B9_7F4A_7C15 } else { s },
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Bernoulli draw advancing the stream. `p` is clamped to [0, 1].
    pub fn gen_bool(&mut self, p: f64) -> bool {
        self.next_u64() < prob_threshold(p)
    }

    /// Stateless Bernoulli draw keyed on a packet identity, so the outcome
    /// for a given packet does not depend on how many other packets were
    /// transmitted before it. Used by loss models that must stay comparable
    /// across differential runs.
    pub fn keyed_bool(&self, p: f64, key: &[u64]) -> bool {
        let mut h = self.state;
        for &k in key {
            h = splitmix64(h ^ k);
        }
        h < prob_threshold(p)
    }
}

fn prob_threshold(p: f64) -> u64 {
    if p <= 0.0 {
        0
    } else if p >= 1.0 {
        u64::MAX
    } else {
        // p * 2^64, computed via 2^32 halves to stay in range.
        (p * 4_294_967_296.0 * 4_294_967_296.0) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_fire_in_time_order() {
        let mut q: EventQueue<u32> = EventQueue::new();
        q.schedule(SimTime::from_secs(5), 5);
        q.schedule(SimTime::from_secs(3), 3);
        let mut seen = Vec::new();
        q.run_until(SimTime::from_secs(10), |_, _, v| seen.push(v));
        assert_eq!(seen, vec![3, 5]);
    }

    #[test]
    fn same_time_events_fire_fifo() {
        let mut q: EventQueue<&str> = EventQueue::new();
        q.schedule(SimTime::from_secs(7), "A");
        q.schedule(SimTime::from_secs(7), "B");
        let mut seen = Vec::new();
        q.run_until(SimTime::from_secs(10), |_, _, v| seen.push(v));
        assert_eq!(seen, vec!["A", "B"]);
    }

    #[test]
    fn cancelled_event_never_fires() {
        let mut q: EventQueue<u32> = EventQueue::new();
        let h = q.schedule(SimTime::from_secs(2), 2);
        q.schedule(SimTime::from_secs(1), 1);
        assert!(q.cancel(h));
        assert!(!q.cancel(h), "double cancel reports false");
        let mut seen = Vec::new();
        let summary = q.run_until(SimTime::from_secs(10), |_, _, v| seen.push(v));
        assert_eq!(seen, vec![1]);
        assert_eq!(summary.executed, 1);
        assert_eq!(summary.cancelled, 1);
    }

    #[test]
    fn run_until_excludes_later_events() {
        let mut q: EventQueue<u32> = EventQueue::new();
        q.schedule(SimTime::from_secs(11), 11);
        let summary = q.run_until(SimTime::from_secs(10), |_, _, _| {});
        assert_eq!(summary.executed, 0);
        assert_eq!(summary.remaining, 1);
        assert_eq!(summary.final_clock, SimTime::from_secs(10));
    }

    #[test]
    fn empty_queue_returns_at_horizon() {
        let mut q: EventQueue<u32> = EventQueue::new();
        let summary = q.run_until(SimTime::from_secs(4), |_, _, _| {});
        assert_eq!(summary.executed, 0);
        assert_eq!(q.now(), SimTime::from_secs(4));
    }

    #[test]
    fn schedule_in_past_panics() {
        let mut q: EventQueue<u32> = EventQueue::new();
        q.schedule(SimTime::from_secs(1), 1);
        q.run_until(SimTime::from_secs(2), |_, _, _| {});
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            q.schedule(SimTime::from_secs(1), 9)
        }));
        assert!(r.is_err());
    }

    #[test]
    fn handlers_can_schedule_followups() {
        let mut q: EventQueue<u32> = EventQueue::new();
        q.schedule(SimTime::from_secs(1), 0);
        let mut seen = Vec::new();
        q.run_until(SimTime::from_secs(10), |q, t, v| {
            seen.push((t, v));
            if v < 3 {
                q.schedule(t.saturating_add(SimTime::from_secs(1)), v + 1);
            }
        });
        assert_eq!(seen.len(), 4);
        assert_eq!(seen[3], (SimTime::from_secs(4), 3));
    }

    #[test]
    fn clock_is_monotonic_across_handlers() {
        let mut q: EventQueue<u32> = EventQueue::new();
        for i in 0..100u64 {
            q.schedule(SimTime::from_nanos(i % 7), i as u32);
        }
        let mut last = SimTime::ZERO;
        q.run_until(SimTime::MAX, |q, _, _| {
            assert!(q.now() >= last);
            last = q.now();
        });
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut a = SimRng::new(42);
        let mut b = SimRng::new(42);
        let xs: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn substreams_are_independent_of_each_other() {
        let root = SimRng::new(7);
        let mut s1 = root.substream("node0/tcp");
        let mut s2 = root.substream("node1/tcp");
        // Draw different amounts from s1; s2's sequence must not change.
        let before: Vec<u64> = {
            let mut s2c = root.substream("node1/tcp");
            (0..8).map(|_| s2c.next_u64()).collect()
        };
        for _ in 0..1000 {
            s1.next_u64();
        }
        let after: Vec<u64> = (0..8).map(|_| s2.next_u64()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn keyed_bool_is_order_independent() {
        let rng = SimRng::new(11).substream("link/wifi");
        let a = rng.keyed_bool(0.3, &[1, 2, 3]);
        // Interleave unrelated draws; keyed outcome must be stable.
        let mut noise = rng.clone();
        for _ in 0..17 {
            noise.next_u64();
        }
        assert_eq!(a, rng.keyed_bool(0.3, &[1, 2, 3]));
        assert!(!rng.keyed_bool(0.0, &[9]));
        assert!(rng.keyed_bool(1.0, &[9]));
    }

    #[test]
    fn no_event_loss_accounting() {
        let mut q: EventQueue<u32> = EventQueue::new();
        let mut handles = Vec::new();
        for i in 0..50u64 {
            handles.push(q.schedule(SimTime::from_nanos(i), i as u32));
        }
        for h in handles.iter().step_by(5) {
            q.cancel(*h);
        }
        let summary = q.run_until(SimTime::from_nanos(29), |_, _, _| {});
        // scheduled = executed + cancelled + beyond horizon
        assert_eq!(50, summary.executed + summary.cancelled + summary.remaining);
    }
}
