//! Wall-clock abstraction. Every read and wait of the tick server goes
//! through [`Clock`], so protocol runs can be replayed under [`MockClock`].

use std::collections::VecDeque;
use std::sync::mpsc::{Receiver, RecvTimeoutError, TryRecvError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Nanoseconds since the clock's origin.
pub type WallNs = u64;

pub const NS_PER_MS: u64 = 1_000_000;

pub fn ns_to_ms(ns: WallNs) -> f64 {
    ns as f64 / NS_PER_MS as f64
}

/// Events delivered to a tick-server session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerEvent {
    Line(String),
    Interrupt { source: String, payload: String },
    Closed,
}

/// What a session is blocked on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaitFor {
    /// The model is mid-round; only its next line (or a queued interrupt).
    Line,
    /// Sleeping until a deadline.
    Until(WallNs),
    /// Sleeping with no deadline.
    Forever,
}

pub trait Clock: Send + Sync {
    fn now(&self) -> WallNs;

    /// Next event, or `None` when a deadline passes first.
    fn wait_event(&self, rx: &Receiver<ServerEvent>, wait: WaitFor) -> Option<ServerEvent>;

    fn sleep_until(&self, deadline: WallNs);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> WallNs {
        self.origin.elapsed().as_nanos() as WallNs
    }

    fn wait_event(&self, rx: &Receiver<ServerEvent>, wait: WaitFor) -> Option<ServerEvent> {
        match wait {
            WaitFor::Line | WaitFor::Forever => Some(rx.recv().unwrap_or(ServerEvent::Closed)),
            WaitFor::Until(d) => {
                let left = d.saturating_sub(self.now());
                match rx.recv_timeout(Duration::from_nanos(left)) {
                    Ok(ev) => Some(ev),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => Some(ServerEvent::Closed),
                }
            }
        }
    }

    fn sleep_until(&self, deadline: WallNs) {
        let left = deadline.saturating_sub(self.now());
        if left > 0 {
            std::thread::sleep(Duration::from_nanos(left));
        }
    }
}

/// Deterministic clock: time moves only when something waits on it.
/// Scripted interrupts fire at fixed instants.
#[derive(Default)]
pub struct MockClock {
    inner: Mutex<MockState>,
}

#[derive(Default)]
struct MockState {
    now: WallNs,
    script: VecDeque<(WallNs, String, String)>,
}

impl MockClock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interrupts `(at, source, payload)`, fired in time order.
    pub fn with_interrupts(script: Vec<(WallNs, &str, &str)>) -> Self {
        let mut s: Vec<_> = script
            .into_iter()
            .map(|(t, src, p)| (t, src.to_string(), p.to_string()))
            .collect();
        s.sort_by_key(|e| e.0);
        MockClock {
            inner: Mutex::new(MockState {
                now: 0,
                script: s.into(),
            }),
        }
    }

    pub fn advance(&self, ns: WallNs) {
        self.inner.lock().expect("mock clock").now += ns;
    }

    pub fn set(&self, ns: WallNs) {
        let mut st = self.inner.lock().expect("mock clock");
        st.now = st.now.max(ns);
    }

    fn pop_scripted(&self, limit: Option<WallNs>) -> Option<ServerEvent> {
        let mut st = self.inner.lock().expect("mock clock");
        let &(at, _, _) = st.script.front()?;
        if limit.is_some_and(|l| at > l) {
            return None;
        }
        let (_, source, payload) = st.script.pop_front()?;
        st.now = st.now.max(at);
        Some(ServerEvent::Interrupt { source, payload })
    }
}

impl Clock for MockClock {
    fn now(&self) -> WallNs {
        self.inner.lock().expect("mock clock").now
    }

    fn wait_event(&self, rx: &Receiver<ServerEvent>, wait: WaitFor) -> Option<ServerEvent> {
        match wait {
            WaitFor::Line => self
                .pop_scripted(Some(self.now()))
                .or_else(|| Some(rx.recv().unwrap_or(ServerEvent::Closed))),
            WaitFor::Until(d) => {
                if let Some(ev) = self.pop_scripted(Some(d)) {
                    return Some(ev);
                }
                match rx.try_recv() {
                    Ok(ev) => Some(ev),
                    Err(TryRecvError::Disconnected) => Some(ServerEvent::Closed),
                    Err(TryRecvError::Empty) => {
                        self.set(d);
                        None
                    }
                }
            }
            WaitFor::Forever => self
                .pop_scripted(None)
                .or_else(|| Some(rx.recv().unwrap_or(ServerEvent::Closed))),
        }
    }

    fn sleep_until(&self, deadline: WallNs) {
        self.set(deadline);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::mpsc::channel;

    #[test]
    fn mock_jumps_to_deadline() {
        let c = MockClock::new();
        let (_tx, rx) = channel();
        assert_eq!(c.wait_event(&rx, WaitFor::Until(5_000)), None);
        assert_eq!(c.now(), 5_000);
    }

    #[test]
    fn mock_fires_scripted_interrupt_before_deadline() {
        let c = MockClock::with_interrupts(vec![(4_000, "ui", "bolus"), (20_000, "ui", "late")]);
        let (_tx, rx) = channel();
        let ev = c.wait_event(&rx, WaitFor::Until(10_000));
        assert_eq!(
            ev,
            Some(ServerEvent::Interrupt {
                source: "ui".into(),
                payload: "bolus".into()
            })
        );
        assert_eq!(c.now(), 4_000);
        assert_eq!(c.wait_event(&rx, WaitFor::Until(10_000)), None);
        assert_eq!(c.now(), 10_000);
    }

    #[test]
    fn system_clock_times_out() {
        let c = SystemClock::new();
        let (_tx, rx) = channel();
        let d = c.now() + 2 * NS_PER_MS;
        assert_eq!(c.wait_event(&rx, WaitFor::Until(d)), None);
        assert!(c.now() >= d);
    }
}
