//! The tiered server farm behind the dispatcher.
//!
//! Each tier is one shared FIFO queue feeding `server_count` identical servers with
//! exponential service times. A request only ever visits the tier it was addressed to.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::engine::rng::{draw_exponential, SimRng};
use crate::error::{Error, Result};
use crate::stats;
use crate::types::{RequestId, RequestRecord, SimTime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierSpec {
    pub name: String,
    pub servers: u32,
    /// Mean service time in seconds.
    pub mean_service: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub tiers: Vec<TierSpec>,
    /// Dispatcher-to-tier transit delay in seconds.
    #[serde(default)]
    pub transit_delay: f64,
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tiers.is_empty() {
            return Err(Error::config("cluster.tiers must not be empty"));
        }
        for (i, tier) in self.tiers.iter().enumerate() {
            if tier.servers == 0 {
                return Err(Error::config(format!("cluster.tiers[{i}].servers must be >= 1")));
            }
            if !(tier.mean_service.is_finite() && tier.mean_service > 0.0) {
                return Err(Error::config(format!(
                    "cluster.tiers[{i}].mean_service must be > 0"
                )));
            }
        }
        if !(self.transit_delay.is_finite() && self.transit_delay >= 0.0) {
            return Err(Error::config("cluster.transit_delay must be >= 0"));
        }
        Ok(())
    }

    pub fn tier_index(&self, name: &str) -> Option<usize> {
        self.tiers.iter().position(|t| t.name == name)
    }

    /// Requests per second the tier can sustain at full utilisation.
    pub fn tier_capacity(&self, tier: usize) -> f64 {
        let t = &self.tiers[tier];
        t.servers as f64 / t.mean_service
    }
}

/// Occupancy bookkeeping for Little's-law style checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TierCounters {
    pub since: f64,
    /// Integral of requests present (queued + in service) over time.
    pub occupancy_area: f64,
    pub arrivals: u64,
    pub completions: u64,
    pub total_wait: f64,
    pub total_response: f64,
    last_change: f64,
}

impl TierCounters {
    pub fn mean_wait(&self) -> f64 {
        self.total_wait / self.completions.max(1) as f64
    }

    pub fn mean_response(&self) -> f64 {
        self.total_response / self.completions.max(1) as f64
    }

    /// Time-averaged number of requests in the tier up to `now`.
    pub fn mean_occupancy(&self, now: f64) -> f64 {
        let span = now - self.since;
        if span > 0.0 {
            self.occupancy_area / span
        } else {
            0.0
        }
    }

    pub fn arrival_rate(&self, now: f64) -> f64 {
        let span = now - self.since;
        if span > 0.0 {
            self.arrivals as f64 / span
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct TierState {
    pub index: usize,
    pub servers: u32,
    pub mean_service: f64,
    pub busy: u32,
    pub queue: VecDeque<RequestId>,
    pub counters: TierCounters,
}

impl TierState {
    fn new(index: usize, spec: &TierSpec) -> Self {
        TierState {
            index,
            servers: spec.servers,
            mean_service: spec.mean_service,
            busy: 0,
            queue: VecDeque::new(),
            counters: TierCounters::default(),
        }
    }

    pub fn present(&self) -> usize {
        self.busy as usize + self.queue.len()
    }

    fn account(&mut self, now: f64) {
        let c = &mut self.counters;
        c.occupancy_area += (self.busy as f64 + self.queue.len() as f64) * (now - c.last_change);
        c.last_change = now;
    }
}

/// What happened to a freshly dispatched request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DispatchOutcome {
    /// A server was free; the request completes at the given time.
    Started { completes_at: SimTime },
    /// All servers busy; the request waits at this queue position (1-based).
    Queued { position: usize },
}

/// A request that left its tier, and possibly the next one taking its server.
#[derive(Debug, Clone)]
pub struct Completion {
    pub request: RequestRecord,
    pub next: Option<(RequestId, SimTime)>,
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub tiers: Vec<TierState>,
    in_flight: HashMap<RequestId, RequestRecord>,
    pub rejections: u64,
}

impl Cluster {
    pub fn new(spec: &ClusterSpec) -> Self {
        Cluster {
            tiers: spec
                .tiers
                .iter()
                .enumerate()
                .map(|(i, t)| TierState::new(i, t))
                .collect(),
            in_flight: HashMap::new(),
            rejections: 0,
        }
    }

    /// Hands `request` to its tier: starts service on a free server or queues it.
    pub fn dispatch(
        &mut self,
        mut request: RequestRecord,
        now: SimTime,
        service_rng: &mut SimRng,
    ) -> DispatchOutcome {
        let tier = &mut self.tiers[request.tier];
        tier.account(now.secs());
        tier.counters.arrivals += 1;
        request.dispatch_time = now;
        let id = request.id;
        let outcome = if tier.busy < tier.servers {
            tier.busy += 1;
            let service = draw_exponential(service_rng, tier.mean_service);
            request.service_start = Some(now);
            request.service_time = Some(service);
            DispatchOutcome::Started {
                completes_at: now + service,
            }
        } else {
            tier.queue.push_back(id);
            DispatchOutcome::Queued {
                position: tier.queue.len(),
            }
        };
        self.in_flight.insert(id, request);
        outcome
    }

    /// Finishes service of `request`, records its response time and starts the head of the
    /// queue on the freed server.
    pub fn complete(
        &mut self,
        request: RequestId,
        now: SimTime,
        service_rng: &mut SimRng,
    ) -> Result<Completion> {
        let mut record = self
            .in_flight
            .remove(&request)
            .ok_or_else(|| Error::Consistency {
                time: now.secs(),
                message: format!("completion for unknown request {request:?}"),
            })?;
        let tier = &mut self.tiers[record.tier];
        tier.account(now.secs());
        let response = now.since(record.dispatch_time);
        record.response_time = Some(response);
        tier.counters.completions += 1;
        tier.counters.total_response += response;
        tier.counters.total_wait += record.waiting_time().unwrap_or(0.0);
        tier.busy -= 1;

        let next = match tier.queue.pop_front() {
            Some(next_id) => {
                tier.busy += 1;
                let service = draw_exponential(service_rng, tier.mean_service);
                let next = self
                    .in_flight
                    .get_mut(&next_id)
                    .expect("queued request is in flight");
                next.service_start = Some(now);
                next.service_time = Some(service);
                Some((next_id, now + service))
            }
            None => None,
        };
        Ok(Completion {
            request: record,
            next,
        })
    }

    /// Answers a refused session with the busy page. No tier does any work.
    pub fn reject_session(&mut self) {
        self.rejections += 1;
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn request(&self, id: RequestId) -> Option<&RequestRecord> {
        self.in_flight.get(&id)
    }

    /// Restarts occupancy counters (end of warm-up).
    pub fn reset_counters(&mut self, now: SimTime) {
        for tier in &mut self.tiers {
            tier.account(now.secs());
            tier.counters = TierCounters {
                since: now.secs(),
                last_change: now.secs(),
                ..TierCounters::default()
            };
        }
    }

    /// Brings occupancy integrals up to `now` without changing state.
    pub fn settle(&mut self, now: SimTime) {
        for tier in &mut self.tiers {
            tier.account(now.secs());
        }
    }

    pub fn check_work_conserving(&self) -> bool {
        self.tiers
            .iter()
            .all(|t| t.queue.is_empty() || t.busy == t.servers)
    }
}

/// Samples per tier taken by [`benchmark_idle`].
pub const BENCHMARK_SAMPLES: usize = 1000;

/// Offline benchmark of an idle cluster: the 95th percentile of the response time per tier
/// when requests are sent one at a time.
pub fn benchmark_idle(spec: &ClusterSpec, rng: &mut SimRng) -> Vec<f64> {
    let mut cluster = Cluster::new(spec);
    let mut now = SimTime::ZERO;
    let mut next_id = 0u64;
    (0..spec.tiers.len())
        .map(|tier| {
            let mut samples = Vec::with_capacity(BENCHMARK_SAMPLES);
            for _ in 0..BENCHMARK_SAMPLES {
                next_id += 1;
                let id = RequestId(next_id);
                let req = RequestRecord::new(id, crate::types::SessionId(0), tier, now);
                let done = match cluster.dispatch(req, now, rng) {
                    DispatchOutcome::Started { completes_at } => completes_at,
                    DispatchOutcome::Queued { .. } => {
                        panic!("idle benchmark observed queueing on tier {tier}")
                    }
                };
                let completion = cluster
                    .complete(id, done, rng)
                    .expect("benchmark request is in flight");
                assert!(completion.next.is_none(), "idle benchmark observed queueing");
                assert_eq!(completion.request.waiting_time(), Some(0.0));
                samples.push(completion.request.response_time.unwrap_or(0.0));
                now = done;
            }
            stats::p95(&mut samples).unwrap_or(0.0)
        })
        .collect()
}
