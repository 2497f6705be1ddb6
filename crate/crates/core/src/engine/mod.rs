//! Deterministic discrete-event loop.
//!
//! One [`Simulation`] owns the clock, the event list, the cluster, the live sessions and the
//! admission controller. Everything observable leaves through a [`MetricSink`].

pub mod queue;
pub mod rng;

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use crate::cluster::{benchmark_idle, Cluster, ClusterSpec, DispatchOutcome, TierCounters};
use crate::error::{Error, Result};
use crate::monitor::Knot;
use crate::policy::{AdmissionController, ControlSnapshot};
use crate::sla::SlaSpec;
use crate::traffic::{
    build_session, draw_think_time, next_arrival, NextArrival, SessionTemplate, TrafficProfile,
};
use crate::types::{RequestId, RequestRecord, SessionId, SessionRecord, SessionState, SimTime};

pub use queue::{Event, EventKind, EventQueue};
pub use rng::{draw_exponential, uniform_open_closed, RngStreams, SimRng};

/// Everything that describes the simulated system, independent of the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cluster: ClusterSpec,
    pub sla: SlaSpec,
    pub traffic: TrafficProfile,
    pub session: SessionTemplate,
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.sla.validate()?;
        if self.sla.tiers() != self.cluster.tiers.len() {
            return Err(Error::config(format!(
                "sla.rt_limit has {} entries but the cluster has {} tiers",
                self.sla.tiers(),
                self.cluster.tiers.len()
            )));
        }
        self.traffic.validate()?;
        self.session.validate(self.cluster.tiers.len())
    }
}

/// Run length and bookkeeping intervals, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub seed: u64,
    pub horizon: f64,
    /// Summaries ignore everything before this instant.
    pub warmup: f64,
    /// Spacing of time-series samples.
    pub sample_interval: f64,
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config("horizon must be > 0"));
        }
        if !(self.warmup.is_finite() && self.warmup >= 0.0 && self.warmup < self.horizon) {
            return Err(Error::config(format!(
                "warmup {} must lie in [0, horizon = {})",
                self.warmup, self.horizon
            )));
        }
        if !(self.sample_interval.is_finite() && self.sample_interval > 0.0) {
            return Err(Error::config("sample_interval must be > 0"));
        }
        Ok(())
    }
}

/// Idle-cluster benchmark drawn from the run's own benchmark stream.
pub fn benchmark(model: &Model, seed: u64) -> Vec<f64> {
    let mut streams = RngStreams::new(seed, model.cluster.tiers.len());
    benchmark_idle(&model.cluster, &mut streams.benchmark)
}

/// Observable happenings, in the order they occur.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricEvent {
    Arrival {
        time: SimTime,
        admitted: bool,
    },
    /// A request finished. `delivered` is false when its client had already left.
    Response {
        time: SimTime,
        tier: usize,
        rt: f64,
        delivered: bool,
    },
    SessionEnd {
        time: SimTime,
        state: SessionState,
    },
    /// The controller's externally visible state changed.
    Decision {
        time: SimTime,
        control: ControlSnapshot,
    },
    Sample {
        time: SimTime,
        control: ControlSnapshot,
    },
    /// End of a compliance window. `partial` marks a window cut short by the horizon.
    SlaCheck {
        time: SimTime,
        partial: bool,
    },
    WarmupEnd {
        time: SimTime,
    },
    Warning {
        time: SimTime,
        message: String,
    },
}

pub trait MetricSink {
    fn record(&mut self, event: &MetricEvent);
}

impl MetricSink for Vec<MetricEvent> {
    fn record(&mut self, event: &MetricEvent) {
        self.push(event.clone());
    }
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl MetricSink for NullSink {
    fn record(&mut self, _event: &MetricEvent) {}
}

/// Session conservation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionCounts {
    pub arrivals: u64,
    pub admitted: u64,
    pub rejected: u64,
    pub completed: u64,
    pub abandoned: u64,
    pub active: u64,
}

impl SessionCounts {
    pub fn conserved(&self) -> bool {
        self.arrivals == self.admitted + self.rejected
            && self.admitted == self.active + self.completed + self.abandoned
    }
}

/// What a finished run reports besides its metric stream.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub end_time: SimTime,
    pub events: u64,
    pub sessions: SessionCounts,
    /// Per-tier occupancy counters since the end of warm-up.
    pub tiers: Vec<TierCounters>,
    pub control: ControlSnapshot,
    pub curves: Option<Vec<Vec<Knot>>>,
    /// Digest of the processed event sequence; equal digests mean equal traces.
    pub trace_digest: u64,
}

pub struct Simulation {
    model: Model,
    options: RunOptions,
    queue: EventQueue,
    streams: RngStreams,
    cluster: Cluster,
    policy: Box<dyn AdmissionController>,
    sessions: HashMap<SessionId, SessionRecord>,
    in_transit: HashMap<RequestId, RequestRecord>,
    counts: SessionCounts,
    next_session: u64,
    next_request: u64,
    tick_generation: u64,
    scheduled_tick: Option<SimTime>,
    last_control: ControlSnapshot,
    last_sla_check: SimTime,
    events: u64,
    trace: DefaultHasher,
}

impl Simulation {
    pub fn new(model: Model, options: RunOptions, policy: Box<dyn AdmissionController>) -> Result<Self> {
        model.validate()?;
        options.validate()?;
        let tiers = model.cluster.tiers.len();
        let cluster = Cluster::new(&model.cluster);
        let last_control = policy.snapshot();
        Ok(Simulation {
            streams: RngStreams::new(options.seed, tiers),
            model,
            options,
            queue: EventQueue::new(),
            cluster,
            policy,
            sessions: HashMap::new(),
            in_transit: HashMap::new(),
            counts: SessionCounts::default(),
            next_session: 0,
            next_request: 0,
            tick_generation: 0,
            scheduled_tick: None,
            last_control,
            last_sla_check: SimTime::ZERO,
            events: 0,
            trace: DefaultHasher::new(),
        })
    }

    fn now(&self) -> SimTime {
        self.queue.now()
    }

    fn horizon(&self) -> SimTime {
        SimTime::from_secs(self.options.horizon)
    }

    /// Runs until the clock would pass the horizon.
    pub fn run(mut self, sink: &mut dyn MetricSink) -> Result<RunReport> {
        sink.record(&MetricEvent::Decision {
            time: SimTime::ZERO,
            control: self.last_control,
        });
        self.schedule_next_arrival()?;
        self.queue.schedule(
            SimTime::from_secs(self.model.sla.check_interval),
            EventKind::SlaTick,
        )?;
        self.queue.schedule(
            SimTime::from_secs(self.options.sample_interval),
            EventKind::SampleTick,
        )?;
        if self.options.warmup > 0.0 {
            self.queue
                .schedule(SimTime::from_secs(self.options.warmup), EventKind::WarmupEnd)?;
        }
        self.sync_policy(sink)?;

        let horizon = self.horizon();
        while self.queue.peek_time().is_some_and(|t| t <= horizon) {
            let event = self.queue.pop().expect("peeked");
            self.events += 1;
            event.fire_time.secs().to_bits().hash(&mut self.trace);
            std::mem::discriminant(&event.kind).hash(&mut self.trace);
            self.handle(event, sink)?;
        }

        if self.last_sla_check < horizon {
            sink.record(&MetricEvent::SlaCheck {
                time: horizon,
                partial: true,
            });
        }
        self.cluster.settle(horizon);
        self.check_conservation(horizon)?;
        Ok(RunReport {
            end_time: horizon,
            events: self.events,
            sessions: self.counts,
            tiers: self.cluster.tiers.iter().map(|t| t.counters.clone()).collect(),
            control: self.policy.snapshot(),
            curves: self.policy.curves(),
            trace_digest: self.trace.finish(),
        })
    }

    fn handle(&mut self, event: Event, sink: &mut dyn MetricSink) -> Result<()> {
        let now = event.fire_time;
        match event.kind {
            EventKind::SessionArrival => {
                self.on_arrival(now, sink)?;
                self.schedule_next_arrival()?;
            }
            EventKind::ProfileChange => self.schedule_next_arrival()?,
            EventKind::RequestDispatch { request } => {
                let record = self
                    .in_transit
                    .remove(&request)
                    .ok_or_else(|| Error::Consistency {
                        time: now.secs(),
                        message: format!("dispatch of unknown request {request:?}"),
                    })?;
                self.dispatch(record, now)?;
            }
            EventKind::ServiceCompletion { request } => self.on_completion(request, now, sink)?,
            EventKind::ThinkExpiry { session } => self.issue_next_request(session, now, sink)?,
            EventKind::ClientTimeout { session, request } => {
                let waiting = self
                    .sessions
                    .get(&session)
                    .is_some_and(|s| s.outstanding == Some(request));
                if waiting {
                    self.end_session(session, SessionState::Abandoned, now, sink);
                }
            }
            EventKind::ControlTick { generation } => {
                if generation == self.tick_generation {
                    self.scheduled_tick = None;
                    self.policy.on_control_tick(now);
                }
            }
            EventKind::SlaTick => {
                self.last_sla_check = now;
                self.check_conservation(now)?;
                sink.record(&MetricEvent::SlaCheck {
                    time: now,
                    partial: false,
                });
                self.queue
                    .schedule(now + self.model.sla.check_interval, EventKind::SlaTick)?;
            }
            EventKind::SampleTick => {
                sink.record(&MetricEvent::Sample {
                    time: now,
                    control: self.policy.snapshot(),
                });
                self.queue
                    .schedule(now + self.options.sample_interval, EventKind::SampleTick)?;
            }
            EventKind::WarmupEnd => {
                self.cluster.reset_counters(now);
                sink.record(&MetricEvent::WarmupEnd { time: now });
            }
        }
        self.sync_policy(sink)
    }

    fn schedule_next_arrival(&mut self) -> Result<()> {
        match next_arrival(self.now(), &self.model.traffic, &mut self.streams.arrivals) {
            NextArrival::At(t) if t <= self.horizon() => self.queue.schedule(t, EventKind::SessionArrival),
            NextArrival::ProfileChange(t) if t <= self.horizon() => {
                self.queue.schedule(t, EventKind::ProfileChange)
            }
            _ => Ok(()),
        }
    }

    fn on_arrival(&mut self, now: SimTime, sink: &mut dyn MetricSink) -> Result<()> {
        self.next_session += 1;
        let id = SessionId(self.next_session);
        // plan and coin are drawn for every arrival so that their streams stay aligned
        // whatever the controller decides
        let mut session = build_session(id, now, &mut self.streams.session_plan, &self.model.session);
        let coin = uniform_open_closed(&mut self.streams.admission);
        let admitted = self.policy.on_arrival(now, coin);
        self.counts.arrivals += 1;
        sink.record(&MetricEvent::Arrival { time: now, admitted });
        if !admitted {
            self.counts.rejected += 1;
            self.cluster.reject_session();
            return Ok(());
        }
        self.counts.admitted += 1;
        self.counts.active += 1;
        session.admitted = true;
        self.sessions.insert(id, session);
        self.issue_next_request(id, now, sink)
    }

    fn issue_next_request(&mut self, id: SessionId, now: SimTime, sink: &mut dyn MetricSink) -> Result<()> {
        let Some(session) = self.sessions.get_mut(&id) else {
            return Ok(());
        };
        let Some(tier) = session.request_plan.pop_front() else {
            self.end_session(id, SessionState::Completed, now, sink);
            return Ok(());
        };
        self.next_request += 1;
        let request = RequestId(self.next_request);
        session.outstanding = Some(request);
        session.state = SessionState::Waiting;

        let timeout = now + self.model.session.client_timeout;
        if timeout <= self.horizon() {
            self.queue
                .schedule(timeout, EventKind::ClientTimeout { session: id, request })?;
        }
        let record = RequestRecord::new(request, id, tier, now);
        let transit = self.model.cluster.transit_delay;
        if transit > 0.0 {
            self.in_transit.insert(request, record);
            self.queue
                .schedule(now + transit, EventKind::RequestDispatch { request })
        } else {
            self.dispatch(record, now)
        }
    }

    fn dispatch(&mut self, record: RequestRecord, now: SimTime) -> Result<()> {
        let tier = record.tier;
        let id = record.id;
        match self
            .cluster
            .dispatch(record, now, &mut self.streams.service[tier])
        {
            DispatchOutcome::Started { completes_at } => self
                .queue
                .schedule(completes_at, EventKind::ServiceCompletion { request: id }),
            DispatchOutcome::Queued { .. } => Ok(()),
        }
    }

    fn on_completion(&mut self, request: RequestId, now: SimTime, sink: &mut dyn MetricSink) -> Result<()> {
        let tier_index = self.cluster.request(request).map(|r| r.tier);
        let service_rng = match tier_index {
            Some(tier) => &mut self.streams.service[tier],
            None => {
                return Err(Error::Consistency {
                    time: now.secs(),
                    message: format!("completion for unknown request {request:?}"),
                })
            }
        };
        let completion = self.cluster.complete(request, now, service_rng)?;
        if let Some((next, at)) = completion.next {
            self.queue
                .schedule(at, EventKind::ServiceCompletion { request: next })?;
        }
        let record = completion.request;
        // measured at the dispatcher: includes the way to the tier
        let rt = record.response_time.unwrap_or(0.0) + self.model.cluster.transit_delay;
        let session_id = record.session_id;
        let waiting = self
            .sessions
            .get(&session_id)
            .is_some_and(|s| s.outstanding == Some(request));
        sink.record(&MetricEvent::Response {
            time: now,
            tier: record.tier,
            rt,
            delivered: waiting,
        });
        if !waiting {
            self.policy.on_dropped_response();
            return Ok(());
        }
        self.policy.on_response(record.tier, now, rt);
        let session = self.sessions.get_mut(&session_id).expect("checked above");
        session.outstanding = None;
        if session.request_plan.is_empty() {
            self.end_session(session_id, SessionState::Completed, now, sink);
            return Ok(());
        }
        session.state = SessionState::Thinking;
        let think = draw_think_time(&mut self.streams.think, &self.model.session);
        if now + think <= self.horizon() {
            self.queue
                .schedule(now + think, EventKind::ThinkExpiry { session: session_id })?;
        }
        Ok(())
    }

    fn end_session(&mut self, id: SessionId, state: SessionState, now: SimTime, sink: &mut dyn MetricSink) {
        if self.sessions.remove(&id).is_none() {
            return;
        }
        self.counts.active -= 1;
        match state {
            SessionState::Completed => self.counts.completed += 1,
            SessionState::Abandoned => self.counts.abandoned += 1,
            _ => unreachable!("sessions only end completed or abandoned"),
        }
        sink.record(&MetricEvent::SessionEnd { time: now, state });
    }

    /// Re-arms the control tick if the controller moved it, and reports decision changes.
    fn sync_policy(&mut self, sink: &mut dyn MetricSink) -> Result<()> {
        let now = self.now();
        let wanted = self.policy.next_control_tick();
        if wanted != self.scheduled_tick {
            self.tick_generation += 1;
            self.scheduled_tick = wanted;
            if let Some(at) = wanted {
                self.queue.schedule(
                    at,
                    EventKind::ControlTick {
                        generation: self.tick_generation,
                    },
                )?;
            }
        }
        let control = self.policy.snapshot();
        if control != self.last_control {
            self.last_control = control;
            sink.record(&MetricEvent::Decision { time: now, control });
        }
        for message in self.policy.take_warnings() {
            sink.record(&MetricEvent::Warning { time: now, message });
        }
        Ok(())
    }

    fn check_conservation(&self, now: SimTime) -> Result<()> {
        let active = self.sessions.len() as u64;
        if !self.counts.conserved() || active != self.counts.active {
            return Err(Error::Consistency {
                time: now.secs(),
                message: format!("session counts do not add up: {:?}", self.counts),
            });
        }
        if !self.cluster.check_work_conserving() {
            return Err(Error::Consistency {
                time: now.secs(),
                message: "a server idles while its queue is non-empty".into(),
            });
        }
        Ok(())
    }
}
