//! Single-threaded event loop.
//!
//! Events are plain values of a caller-chosen type `E`; "running a callback"
//! means handing the event to a [`Handler`], which may schedule more events.
//! Events fire in `(deadline, sequence)` order, so ties at one deadline run
//! in insertion order.

use alloc::collections::BTreeMap;
use core::time::Duration;

use crate::time::SimTime;

/// Handle to a scheduled event, usable for cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId {
    pub deadline: SimTime,
    pub seq: u64,
}

pub trait Handler<E> {
    fn handle(&mut self, sched: &mut Scheduler<E>, event: E);
}

impl<E, F> Handler<E> for F
where
    F: FnMut(&mut Scheduler<E>, E),
{
    fn handle(&mut self, sched: &mut Scheduler<E>, event: E) {
        self(sched, event)
    }
}

#[derive(Debug)]
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    queue: BTreeMap<EventId, E>,
    executed: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BTreeMap::new(),
            executed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Number of events executed so far.
    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn schedule(&mut self, delay: Duration, event: E) -> EventId {
        let at = self.now + delay;
        self.schedule_at(at, event)
    }

    /// Schedules at an absolute instant; instants in the past are clamped to now.
    pub fn schedule_at(&mut self, at: SimTime, event: E) -> EventId {
        let id = EventId {
            deadline: at.max(self.now),
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.queue.insert(id, event);
        id
    }

    pub fn cancel(&mut self, id: EventId) -> Option<E> {
        self.queue.remove(&id)
    }

    pub fn peek_deadline(&self) -> Option<SimTime> {
        self.queue.keys().next().map(|id| id.deadline)
    }

    /// Removes the next event if its deadline is `<= limit`, advancing the clock to it.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<(EventId, E)> {
        let first = *self.queue.keys().next()?;
        if first.deadline > limit {
            return None;
        }
        let event = self.queue.remove(&first)?;
        self.now = first.deadline;
        self.executed += 1;
        Some((first, event))
    }

    /// Runs every event with a deadline `<= limit`, then sets the clock to `limit`.
    pub fn run_until<H: Handler<E>>(&mut self, handler: &mut H, limit: SimTime) -> SimTime {
        while let Some((_, event)) = self.pop_until(limit) {
            handler.handle(self, event);
        }
        if limit > self.now {
            self.now = limit;
        }
        self.now
    }

    /// Runs events until `stop` returns true after an event or the queue passes `limit`.
    /// Returns whether `stop` fired.
    pub fn run_while<H: Handler<E>>(
        &mut self,
        handler: &mut H,
        limit: SimTime,
        mut stop: impl FnMut(&H) -> bool,
    ) -> bool {
        while let Some((_, event)) = self.pop_until(limit) {
            handler.handle(self, event);
            if stop(handler) {
                return true;
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    type Log = Vec<(u64, &'static str)>;

    #[test]
    fn zero_delay_runs_before_later_deadlines() {
        let mut s: Scheduler<&'static str> = Scheduler::new();
        s.schedule(Duration::from_millis(1), "later");
        s.schedule(Duration::ZERO, "now");
        let mut log: Log = Vec::new();
        s.run_until(
            &mut |sch: &mut Scheduler<&'static str>, e| log.push((sch.now().as_nanos(), e)),
            SimTime::from_millis(10),
        );
        assert_eq!(log, vec![(0, "now"), (1_000_000, "later")]);
    }

    #[test]
    fn equal_deadlines_fifo() {
        let mut s: Scheduler<u32> = Scheduler::new();
        for i in 0..5 {
            s.schedule(Duration::from_millis(2), i);
        }
        let mut seen = Vec::new();
        s.run_until(&mut |_: &mut Scheduler<u32>, e| seen.push(e), SimTime::from_millis(2));
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn callback_observes_advanced_clock() {
        let mut s: Scheduler<u8> = Scheduler::new();
        s.schedule(Duration::from_millis(1), 0);
        let mut seen = Vec::new();
        s.run_until(
            &mut |sch: &mut Scheduler<u8>, e: u8| {
                if e == 0 {
                    sch.schedule(Duration::from_millis(5), 1);
                } else {
                    seen.push(sch.now());
                }
            },
            SimTime::from_millis(100),
        );
        assert_eq!(seen, vec![SimTime::from_millis(6)]);
    }

    #[test]
    fn run_until_semantics() {
        let mut s: Scheduler<u8> = Scheduler::new();
        let end = s.run_until(&mut |_: &mut Scheduler<u8>, _| panic!("empty"), SimTime::from_nanos(10));
        assert_eq!(end, SimTime::from_nanos(10));

        let mut s: Scheduler<u8> = Scheduler::new();
        s.schedule_at(SimTime::from_nanos(3), 3);
        let mut order = Vec::new();
        s.run_until(
            &mut |sch: &mut Scheduler<u8>, e: u8| {
                order.push(e);
                if e == 3 {
                    sch.schedule_at(SimTime::from_nanos(7), 7);
                    sch.schedule_at(SimTime::from_nanos(12), 12);
                }
            },
            SimTime::from_nanos(10),
        );
        assert_eq!(order, vec![3, 7]);
        assert_eq!(s.len(), 1);
        assert_eq!(s.peek_deadline(), Some(SimTime::from_nanos(12)));
    }

    #[test]
    fn cancellation() {
        let mut s: Scheduler<u8> = Scheduler::new();
        let a = s.schedule(Duration::from_nanos(5), 1);
        s.schedule(Duration::from_nanos(5), 2);
        assert_eq!(s.cancel(a), Some(1));
        assert_eq!(s.cancel(a), None);
        let mut seen = Vec::new();
        s.run_until(&mut |_: &mut Scheduler<u8>, e| seen.push(e), SimTime::from_nanos(5));
        assert_eq!(seen, vec![2]);
    }

    proptest::proptest! {
        #[test]
        fn executed_order_is_lexicographic(delays in proptest::collection::vec(0u64..50, 1..60)) {
            let mut s: Scheduler<usize> = Scheduler::new();
            for (i, d) in delays.iter().enumerate() {
                s.schedule(Duration::from_nanos(*d), i);
            }
            let mut last: Option<(SimTime, usize)> = None;
            let mut ok = true;
            s.run_until(&mut |sch: &mut Scheduler<usize>, e: usize| {
                let key = (sch.now(), e);
                if let Some(prev) = last {
                    // Insertion index doubles as sequence number here.
                    if key.0 < prev.0 || (key.0 == prev.0 && key.1 < prev.1) {
                        ok = false;
                    }
                }
                last = Some(key);
                // Children are scheduled strictly later in sequence order.
                if e < 1000 && sch.now().as_nanos() < 40 {
                    sch.schedule(Duration::from_nanos(3), e + 1000);
                }
            }, SimTime::from_nanos(200));
            proptest::prop_assert!(ok);
        }
    }
}
