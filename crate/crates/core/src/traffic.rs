//! Session arrivals, request plans, think times and client timeouts.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::engine::rng::{draw_exponential, uniform_open_closed};
use crate::error::{Error, Result};
use crate::types::{SessionId, SessionRecord, SimTime};

/// One piece of a piecewise-constant arrival intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: f64,
    /// Session arrival rate (sessions/second) from `start` until the next segment.
    pub rate: f64,
}

/// Time-varying session arrival rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficProfile {
    pub segments: Vec<Segment>,
}

impl TrafficProfile {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let profile = TrafficProfile { segments };
        profile.validate()?;
        Ok(profile)
    }

    pub fn constant(rate: f64) -> Self {
        TrafficProfile {
            segments: vec![Segment { start: 0.0, rate }],
        }
    }

    /// Rate `low` until `at`, then `high` for the rest of the run.
    pub fn step(low: f64, at: f64, high: f64) -> Self {
        TrafficProfile {
            segments: vec![
                Segment {
                    start: 0.0,
                    rate: low,
                },
                Segment {
                    start: at,
                    rate: high,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .segments
            .first()
            .ok_or_else(|| Error::config("traffic profile needs at least one segment"))?;
        if first.start != 0.0 {
            return Err(Error::config("the first traffic segment must start at 0"));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.rate.is_finite() && seg.rate >= 0.0) {
                return Err(Error::config(format!(
                    "traffic.segments[{i}].rate = {} must be >= 0",
                    seg.rate
                )));
            }
            if i > 0
                && seg.start.partial_cmp(&self.segments[i - 1].start) != Some(std::cmp::Ordering::Greater)
            {
                return Err(Error::config(format!(
                    "traffic.segments[{i}].start must be strictly after the previous segment"
                )));
            }
        }
        Ok(())
    }

    fn index_at(&self, t: f64) -> usize {
        self.segments.partition_point(|s| s.start <= t).saturating_sub(1)
    }

    pub fn rate_at(&self, t: SimTime) -> f64 {
        self.segments[self.index_at(t.secs())].rate
    }

    /// Start of the first segment strictly after `t`.
    pub fn next_change_after(&self, t: SimTime) -> Option<SimTime> {
        self.segments
            .get(self.index_at(t.secs()) + 1)
            .map(|s| SimTime::from_secs(s.start))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        TrafficProfile {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    start: s.start,
                    rate: s.rate * factor,
                })
                .collect(),
        }
    }
}

/// Result of asking the arrival process for its next event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NextArrival {
    /// A session arrives at this time.
    At(SimTime),
    /// The rate changes before the next arrival; draw again from here.
    ProfileChange(SimTime),
    /// Zero rate for the rest of the profile.
    Never,
}

/// Next event of the piecewise-constant Poisson arrival process.
///
/// The gap is exponential with the rate in force at `current`. A gap that would cross a
/// segment boundary is cut at the boundary, which is exact thanks to memorylessness.
pub fn next_arrival<R: Rng + ?Sized>(current: SimTime, profile: &TrafficProfile, rng: &mut R) -> NextArrival {
    let rate = profile.rate_at(current);
    let boundary = profile.next_change_after(current);
    if rate <= 0.0 {
        return match boundary {
            Some(b) => NextArrival::ProfileChange(b),
            None => NextArrival::Never,
        };
    }
    let candidate = current + draw_exponential(rng, 1.0 / rate);
    match boundary {
        Some(b) if candidate >= b => NextArrival::ProfileChange(b),
        _ => NextArrival::At(candidate),
    }
}

/// Distribution of the number of requests a phase contributes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CountDistribution {
    /// Always this many requests.
    Fixed(u32),
    /// Geometric on {1, 2, ...} with the given mean (>= 1).
    Geometric(f64),
}

impl CountDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            CountDistribution::Fixed(n) => n as f64,
            CountDistribution::Geometric(mean) => mean,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            CountDistribution::Fixed(n) => n,
            CountDistribution::Geometric(mean) => {
                // rand_distr counts failures before the first success, support {0, 1, ...}
                let failures = Geometric::new(1.0 / mean)
                    .expect("validated geometric mean")
                    .sample(rng);
                (failures + 1).min(u32::MAX as u64) as u32
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            CountDistribution::Fixed(0) => Err(Error::config("fixed request count must be >= 1")),
            CountDistribution::Geometric(mean) if !(mean.is_finite() && mean >= 1.0) => Err(Error::config(
                format!("geometric request count mean {mean} must be >= 1"),
            )),
            _ => Ok(()),
        }
    }
}

/// A session phase: a run of requests that all go to one tier.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    /// Zero-based tier index.
    pub tier: usize,
    pub count: CountDistribution,
}

/// How clients behave once admitted.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTemplate {
    pub phases: Vec<Phase>,
    /// Mean of the exponential think time.
    pub think_mean: f64,
    /// Lower bound on every think time.
    pub think_floor: f64,
    /// Per-request patience; the client abandons when a response takes longer.
    pub client_timeout: f64,
}

impl SessionTemplate {
    pub fn validate(&self, tiers: usize) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::config("session.phases must not be empty"));
        }
        for (i, phase) in self.phases.iter().enumerate() {
            if phase.tier >= tiers {
                return Err(Error::config(format!(
                    "session.phases[{i}] references tier {} but the cluster has {tiers}",
                    phase.tier + 1
                )));
            }
            phase.count.validate()?;
        }
        if !(self.think_mean.is_finite() && self.think_mean >= 0.0) {
            return Err(Error::config("session.think_mean must be >= 0"));
        }
        if !(self.think_floor.is_finite() && self.think_floor > 0.0) {
            return Err(Error::config("session.think_floor must be > 0"));
        }
        if self.client_timeout.is_nan() || self.client_timeout <= 0.0 {
            return Err(Error::config("session.client_timeout must be > 0"));
        }
        Ok(())
    }

    /// Expected number of requests per session.
    pub fn mean_requests(&self) -> f64 {
        self.phases.iter().map(|p| p.count.mean()).sum()
    }

    /// Expected number of requests per session that land on `tier`.
    pub fn mean_requests_on(&self, tier: usize) -> f64 {
        self.phases
            .iter()
            .filter(|p| p.tier == tier)
            .map(|p| p.count.mean())
            .sum()
    }
}

/// Think time `max(-ln(r) * mean, floor)` with `r` uniform on (0, 1].
pub fn think_time_from_uniform(r: f64, template: &SessionTemplate) -> f64 {
    (-r.ln() * template.think_mean).max(template.think_floor)
}

pub fn draw_think_time<R: Rng + ?Sized>(rng: &mut R, template: &SessionTemplate) -> f64 {
    think_time_from_uniform(uniform_open_closed(rng), template)
}

/// Samples a fresh session: each phase's count is drawn and expanded into a flat tier sequence.
pub fn build_session<R: Rng + ?Sized>(
    id: SessionId,
    arrival: SimTime,
    rng: &mut R,
    template: &SessionTemplate,
) -> SessionRecord {
    let mut plan = VecDeque::new();
    for phase in &template.phases {
        let n = phase.count.sample(rng);
        plan.extend(std::iter::repeat_n(phase.tier, n as usize));
    }
    SessionRecord::new(id, arrival, plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::rng::RngStreams;

    fn template(phases: Vec<Phase>) -> SessionTemplate {
        SessionTemplate {
            phases,
            think_mean: 10.0,
            think_floor: 1.0,
            client_timeout: 8.0,
        }
    }

    #[test]
    fn constant_rate_mean_gap() {
        let profile = TrafficProfile::constant(2.0);
        let mut rng = RngStreams::new(3, 1).arrivals;
        let mut t = SimTime::ZERO;
        let n = 100_000;
        for _ in 0..n {
            match next_arrival(t, &profile, &mut rng) {
                NextArrival::At(next) => t = next,
                other => panic!("unexpected {other:?}"),
            }
        }
        let mean_gap = t.secs() / n as f64;
        assert!((mean_gap - 0.5).abs() / 0.5 < 0.02, "mean gap {mean_gap}");
    }

    #[test]
    fn zero_rate_segment_defers_to_next_positive_segment() {
        let profile = TrafficProfile::step(0.0, 100.0, 5.0);
        let mut rng = RngStreams::new(3, 1).arrivals;
        assert_eq!(
            next_arrival(SimTime::ZERO, &profile, &mut rng),
            NextArrival::ProfileChange(SimTime::from_secs(100.0))
        );
        match next_arrival(SimTime::from_secs(100.0), &profile, &mut rng) {
            NextArrival::At(t) => assert!(t.secs() >= 100.0),
            other => panic!("unexpected {other:?}"),
        }
        let silent = TrafficProfile::constant(0.0);
        assert_eq!(next_arrival(SimTime::ZERO, &silent, &mut rng), NextArrival::Never);
    }

    #[test]
    fn step_profile_windowed_rate_tracks_step() {
        // windowed count oracle: each 100 s window holds Poisson(100 * rate) arrivals
        let profile = TrafficProfile::new(vec![
            Segment {
                start: 0.0,
                rate: 2.0,
            },
            Segment {
                start: 1000.0,
                rate: 20.0,
            },
            Segment {
                start: 1500.0,
                rate: 2.0,
            },
        ])
        .unwrap();
        let mut rng = RngStreams::new(5, 1).arrivals;
        let mut counts = [0u32; 20];
        let mut t = SimTime::ZERO;
        loop {
            match next_arrival(t, &profile, &mut rng) {
                NextArrival::At(next) if next.secs() < 2000.0 => {
                    counts[(next.secs() / 100.0) as usize] += 1;
                    t = next;
                }
                NextArrival::ProfileChange(b) => t = b,
                _ => break,
            }
        }
        for (w, &c) in counts.iter().enumerate() {
            let expected = 100.0 * profile.rate_at(SimTime::from_secs(w as f64 * 100.0));
            assert!(
                (c as f64 - expected).abs() <= 4.0 * expected.sqrt(),
                "window {w}: {c} vs {expected}"
            );
        }
    }

    #[test]
    fn think_time_floor_and_identity() {
        let t = template(vec![]);
        assert_eq!(think_time_from_uniform((-0.01f64).exp(), &t), 1.0);
        assert!((think_time_from_uniform((-1.0f64).exp(), &t) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn think_time_mean_matches_integral() {
        // E[max(X, 1)] for X ~ Exp(mean 10), by midpoint quadrature of P(max(X,1) > x)
        let steps = 200_000;
        let upper = 400.0;
        let h = upper / steps as f64;
        let oracle: f64 = (0..steps)
            .map(|k| {
                let x = (k as f64 + 0.5) * h;
                if x < 1.0 {
                    1.0
                } else {
                    (-x / 10.0).exp()
                }
            })
            .sum::<f64>()
            * h;
        assert!((oracle - 10.048_374).abs() < 1e-4, "oracle {oracle}");

        let t = template(vec![]);
        let mut rng = RngStreams::new(17, 1).think;
        let n = 1_000_000;
        let mean = (0..n).map(|_| draw_think_time(&mut rng, &t)).sum::<f64>() / n as f64;
        // standard error is ~0.01
        assert!((mean - oracle).abs() < 0.05, "mean {mean} vs {oracle}");
    }

    #[test]
    fn degenerate_and_fixed_plans() {
        let mut rng = RngStreams::new(1, 3).session_plan;
        let single = template(vec![Phase {
            tier: 2,
            count: CountDistribution::Fixed(1),
        }]);
        let s = build_session(SessionId(1), SimTime::ZERO, &mut rng, &single);
        assert_eq!(s.request_plan, VecDeque::from(vec![2]));

        let two = template(vec![
            Phase {
                tier: 0,
                count: CountDistribution::Fixed(2),
            },
            Phase {
                tier: 2,
                count: CountDistribution::Fixed(1),
            },
        ]);
        let s = build_session(SessionId(2), SimTime::ZERO, &mut rng, &two);
        assert_eq!(s.request_plan, VecDeque::from(vec![0, 0, 2]));
    }

    #[test]
    fn geometric_plan_mean_is_sum_of_phase_means() {
        let t = template(
            (0..3)
                .map(|tier| Phase {
                    tier,
                    count: CountDistribution::Geometric(5.0),
                })
                .collect(),
        );
        let mut rng = RngStreams::new(23, 3).session_plan;
        let n = 100_000;
        let total: usize = (0..n)
            .map(|i| {
                build_session(SessionId(i), SimTime::ZERO, &mut rng, &t)
                    .request_plan
                    .len()
            })
            .sum();
        let mean = total as f64 / n as f64;
        assert!(
            (mean - t.mean_requests()).abs() / t.mean_requests() < 0.01,
            "mean {mean}"
        );
    }

    #[test]
    fn validation() {
        assert!(TrafficProfile::new(vec![]).is_err());
        assert!(TrafficProfile::new(vec![Segment {
            start: 1.0,
            rate: 1.0
        }])
        .is_err());
        assert!(TrafficProfile::new(vec![
            Segment {
                start: 0.0,
                rate: 1.0
            },
            Segment {
                start: 0.0,
                rate: 2.0
            }
        ])
        .is_err());
        assert!(template(vec![]).validate(3).is_err());
        let bad_tier = template(vec![Phase {
            tier: 3,
            count: CountDistribution::Fixed(1),
        }]);
        assert!(bad_tier.validate(3).is_err());
    }
}
