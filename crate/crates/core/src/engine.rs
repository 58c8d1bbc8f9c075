//! Discrete-event kernel: integer microsecond clock and a totally ordered
//! event queue.
//!
//! Events are keyed by `(fire_time, seq)` where `seq` is a monotone insertion
//! counter, so two events scheduled for the same instant are always delivered
//! in the order they were scheduled. Cancellation removes the key from the
//! queue, which keeps the `scheduled - cancelled - delivered = pending`
//! bookkeeping exact.

use alloc::collections::BTreeMap;
use core::fmt;
use core::ops::{Add, AddAssign, Sub};

use thiserror::Error;

/// Microseconds since the start of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    /// One LTE subframe.
    pub const SUBFRAME: SimTime = SimTime(1_000);
    /// One LTE radio frame.
    pub const FRAME: SimTime = SimTime(10_000);

    pub const fn from_us(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub const fn as_us(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 * 1e-3
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    /// Smallest multiple of `grid` that is `>= self`.
    pub fn ceil_to(self, grid: SimTime) -> SimTime {
        if grid.0 == 0 {
            return self;
        }
        SimTime(self.0.div_ceil(grid.0) * grid.0)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Identifier of the simulated entity an event is addressed to.
pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub fire_time: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub payload: P,
}

/// Handle returned by [`EventQueue::schedule`]; permits cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle {
    fire_time: SimTime,
    seq: u64,
}

impl EventHandle {
    pub fn fire_time(&self) -> SimTime {
        self.fire_time
    }
    pub fn seq(&self) -> u64 {
        self.seq
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("event scheduled at {at} but the clock is already at {now}")]
pub struct InThePast {
    pub at: SimTime,
    pub now: SimTime,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError<E> {
    #[error("run_until({t_end}) would move the clock backward from {now}")]
    EndBeforeNow { t_end: SimTime, now: SimTime },
    #[error("handler failed on event seq {seq} at {time} for node {target}: {source}")]
    Handler {
        time: SimTime,
        seq: u64,
        target: NodeId,
        source: E,
    },
}

/// Reacts to delivered events; may schedule further events on the queue.
pub trait Handler<P> {
    type Error;
    fn handle(&mut self, queue: &mut EventQueue<P>, event: Event<P>) -> Result<(), Self::Error>;
}

#[derive(Debug, Clone)]
pub struct EventQueue<P> {
    now: SimTime,
    next_seq: u64,
    pending: BTreeMap<(SimTime, u64), (NodeId, P)>,
    scheduled: u64,
    cancelled: u64,
    delivered: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            now: SimTime::ZERO,
            next_seq: 0,
            pending: BTreeMap::new(),
            scheduled: 0,
            cancelled: 0,
            delivered: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn scheduled_count(&self) -> u64 {
        self.scheduled
    }

    pub fn cancelled_count(&self) -> u64 {
        self.cancelled
    }

    pub fn delivered_count(&self) -> u64 {
        self.delivered
    }

    /// Fire time of the earliest pending event.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.pending.first_key_value().map(|(&(t, _), _)| t)
    }

    pub fn schedule(&mut self, fire_time: SimTime, target: NodeId, payload: P) -> Result<EventHandle, InThePast> {
        if fire_time < self.now {
            return Err(InThePast { at: fire_time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.scheduled += 1;
        self.pending.insert((fire_time, seq), (target, payload));
        Ok(EventHandle { fire_time, seq })
    }

    /// Schedules `delay` after the current time. Never fails.
    pub fn schedule_in(&mut self, delay: SimTime, target: NodeId, payload: P) -> EventHandle {
        let at = self.now + delay;
        match self.schedule(at, target, payload) {
            Ok(h) => h,
            Err(_) => unreachable!("now + delay is never in the past"),
        }
    }

    /// Removes a pending event. Returns `false` if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        let removed = self.pending.remove(&(handle.fire_time, handle.seq)).is_some();
        if removed {
            self.cancelled += 1;
        }
        removed
    }

    /// Pops the next event with `fire_time <= t_end`, advancing the clock to
    /// its fire time.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<P>> {
        let (&(t, _), _) = self.pending.first_key_value()?;
        if t > t_end {
            return None;
        }
        let ((t, seq), (target, payload)) = self.pending.pop_first()?;
        debug_assert!(t >= self.now);
        self.now = t;
        self.delivered += 1;
        Some(Event { fire_time: t, seq, target, payload })
    }

    /// Delivers every event with `fire_time <= t_end` to `handler`, then sets
    /// the clock to `t_end`.
    pub fn run_until<H>(&mut self, t_end: SimTime, handler: &mut H) -> Result<u64, SimError<H::Error>>
    where
        H: Handler<P>,
    {
        if t_end < self.now {
            return Err(SimError::EndBeforeNow { t_end, now: self.now });
        }
        let mut count = 0;
        while let Some(ev) = self.pop_until(t_end) {
            let (time, seq, target) = (ev.fire_time, ev.seq, ev.target);
            count += 1;
            handler
                .handle(self, ev)
                .map_err(|source| SimError::Handler { time, seq, target, source })?;
        }
        self.now = t_end;
        Ok(count)
    }
}
