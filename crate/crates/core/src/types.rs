//! Value types shared across the simulator.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

/// Simulation clock reading, in seconds since the start of the run.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);
    pub const NEVER: SimTime = SimTime(f64::INFINITY);

    pub fn from_secs(secs: f64) -> Self {
        debug_assert!(secs >= 0.0, "negative simulation time {secs}");
        SimTime(secs)
    }

    pub fn secs(self) -> f64 {
        self.0
    }

    /// Seconds elapsed since `earlier` (zero if `earlier` is in the future).
    pub fn since(self, earlier: SimTime) -> f64 {
        (self.0 - earlier.0).max(0.0)
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

impl PartialEq for SimTime {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add<f64> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: f64) -> SimTime {
        SimTime(self.0 + rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestId(pub u64);

/// Lifecycle of a client session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    /// Admitted, first request not dispatched yet.
    Pending,
    Thinking,
    /// A request is outstanding.
    Waiting,
    Completed,
    Abandoned,
    Rejected,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            SessionState::Completed | SessionState::Abandoned | SessionState::Rejected
        )
    }
}

/// One client session: identity, admission outcome and the tiers it still has to visit.
#[derive(Debug, Clone)]
pub struct SessionRecord {
    pub id: SessionId,
    pub arrival_time: SimTime,
    pub admitted: bool,
    /// Zero-based tier index of each remaining request, in issue order.
    pub request_plan: VecDeque<usize>,
    pub state: SessionState,
    pub outstanding: Option<RequestId>,
}

impl SessionRecord {
    pub fn new(id: SessionId, arrival_time: SimTime, request_plan: VecDeque<usize>) -> Self {
        SessionRecord {
            id,
            arrival_time,
            admitted: false,
            request_plan,
            state: SessionState::Pending,
            outstanding: None,
        }
    }
}

/// A single request sent by an admitted session to one tier.
#[derive(Debug, Clone)]
pub struct RequestRecord {
    pub id: RequestId,
    pub session_id: SessionId,
    pub tier: usize,
    pub dispatch_time: SimTime,
    pub service_start: Option<SimTime>,
    pub service_time: Option<f64>,
    /// Set on completion.
    pub response_time: Option<f64>,
}

impl RequestRecord {
    pub fn new(id: RequestId, session_id: SessionId, tier: usize, dispatch_time: SimTime) -> Self {
        RequestRecord {
            id,
            session_id,
            tier,
            dispatch_time,
            service_start: None,
            service_time: None,
            response_time: None,
        }
    }

    pub fn waiting_time(&self) -> Option<f64> {
        self.service_start.map(|s| s.since(self.dispatch_time))
    }
}
