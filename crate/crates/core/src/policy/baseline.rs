//! Threshold (TBAC), probabilistic (PAC) and always-admit controllers.
//!
//! Both threshold-style controllers look only at the response times completed during the
//! period that just ended.

use crate::monitor::Knot;
use crate::stats;
use crate::types::SimTime;

use super::{AdmissionController, ControlMode, ControlSnapshot, PolicyKind};

/// Per-tier response times collected since the last tick.
#[derive(Debug, Clone, Default)]
pub struct PeriodSamples {
    tiers: Vec<Vec<f64>>,
}

impl PeriodSamples {
    pub fn new(tiers: usize) -> Self {
        PeriodSamples {
            tiers: vec![Vec::new(); tiers],
        }
    }

    pub fn push(&mut self, tier: usize, rt: f64) {
        if let Some(samples) = self.tiers.get_mut(tier) {
            samples.push(rt);
        }
    }

    /// 95th percentiles of the period, then starts a new one.
    pub fn close(&mut self) -> Vec<Option<f64>> {
        self.tiers
            .iter_mut()
            .map(|samples| {
                let rt95 = stats::p95(samples);
                samples.clear();
                rt95
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TbacConfig {
    /// Per-tier 95th-percentile thresholds (seconds).
    pub thresholds: Vec<f64>,
    pub period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TbacDecision {
    AcceptAll,
    RejectNew,
}

/// Rejects new sessions iff some tier's percentile exceeds its threshold.
pub fn tbac_decision(thresholds: &[f64], rt95: &[Option<f64>]) -> TbacDecision {
    let violated = thresholds
        .iter()
        .zip(rt95)
        .any(|(limit, rt)| rt.is_some_and(|r| r > *limit));
    if violated {
        TbacDecision::RejectNew
    } else {
        TbacDecision::AcceptAll
    }
}

#[derive(Debug, Clone)]
pub struct TbacPolicy {
    config: TbacConfig,
    samples: PeriodSamples,
    decision: TbacDecision,
    next_tick: SimTime,
}

impl TbacPolicy {
    pub fn new(config: TbacConfig) -> Self {
        let samples = PeriodSamples::new(config.thresholds.len());
        let next_tick = SimTime::from_secs(config.period);
        TbacPolicy {
            config,
            samples,
            decision: TbacDecision::AcceptAll,
            next_tick,
        }
    }

    pub fn decision(&self) -> TbacDecision {
        self.decision
    }
}

impl AdmissionController for TbacPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Tbac
    }

    fn on_arrival(&mut self, _now: SimTime, _coin: f64) -> bool {
        self.decision == TbacDecision::AcceptAll
    }

    fn on_response(&mut self, tier: usize, _now: SimTime, rt: f64) {
        self.samples.push(tier, rt);
    }

    fn on_control_tick(&mut self, now: SimTime) {
        let rt95 = self.samples.close();
        self.decision = tbac_decision(&self.config.thresholds, &rt95);
        self.next_tick = now + self.config.period;
    }

    fn next_control_tick(&self) -> Option<SimTime> {
        Some(self.next_tick)
    }

    fn snapshot(&self) -> ControlSnapshot {
        ControlSnapshot {
            p: match self.decision {
                TbacDecision::AcceptAll => 1.0,
                TbacDecision::RejectNew => 0.0,
            },
            lambda_star: None,
            mode: ControlMode::Normal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacConfig {
    pub rt_low: Vec<f64>,
    pub rt_high: Vec<f64>,
    pub period: f64,
}

/// Linear ramp from 1 at `low` down to 0 at `high`.
pub fn pac_tier_probability(r: f64, low: f64, high: f64) -> f64 {
    if r <= low {
        1.0
    } else if r < high {
        (high - r) / (high - low)
    } else {
        0.0
    }
}

/// Minimum of the per-tier probabilities; tiers without samples do not constrain.
pub fn pac_probability(config: &PacConfig, rt95: &[Option<f64>]) -> f64 {
    rt95.iter()
        .zip(config.rt_low.iter().zip(&config.rt_high))
        .filter_map(|(rt, (low, high))| rt.map(|r| pac_tier_probability(r, *low, *high)))
        .fold(1.0, f64::min)
}

#[derive(Debug, Clone)]
pub struct PacPolicy {
    config: PacConfig,
    samples: PeriodSamples,
    p: f64,
    next_tick: SimTime,
}

impl PacPolicy {
    pub fn new(config: PacConfig) -> Self {
        let samples = PeriodSamples::new(config.rt_low.len());
        let next_tick = SimTime::from_secs(config.period);
        PacPolicy {
            config,
            samples,
            p: 1.0,
            next_tick,
        }
    }
}

impl AdmissionController for PacPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Pac
    }

    fn on_arrival(&mut self, _now: SimTime, coin: f64) -> bool {
        coin <= self.p
    }

    fn on_response(&mut self, tier: usize, _now: SimTime, rt: f64) {
        self.samples.push(tier, rt);
    }

    fn on_control_tick(&mut self, now: SimTime) {
        let rt95 = self.samples.close();
        self.p = pac_probability(&self.config, &rt95);
        self.next_tick = now + self.config.period;
    }

    fn next_control_tick(&self) -> Option<SimTime> {
        Some(self.next_tick)
    }

    fn snapshot(&self) -> ControlSnapshot {
        ControlSnapshot {
            p: self.p,
            lambda_star: None,
            mode: ControlMode::Normal,
        }
    }
}

/// Admits every session.
#[derive(Debug, Clone, Default)]
pub struct AlwaysAdmit;

impl AdmissionController for AlwaysAdmit {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Always
    }

    fn on_arrival(&mut self, _now: SimTime, _coin: f64) -> bool {
        true
    }

    fn on_response(&mut self, _tier: usize, _now: SimTime, _rt: f64) {}

    fn on_control_tick(&mut self, _now: SimTime) {}

    fn next_control_tick(&self) -> Option<SimTime> {
        None
    }

    fn snapshot(&self) -> ControlSnapshot {
        ControlSnapshot {
            p: 1.0,
            lambda_star: None,
            mode: ControlMode::Normal,
        }
    }

    fn curves(&self) -> Option<Vec<Vec<Knot>>> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pac_branches() {
        assert_eq!(pac_tier_probability(2.0, 3.0, 5.0), 1.0);
        assert_eq!(pac_tier_probability(4.0, 3.0, 5.0), 0.5);
        assert_eq!(pac_tier_probability(6.0, 3.0, 5.0), 0.0);
        assert_eq!(pac_tier_probability(3.0, 3.0, 5.0), 1.0);
        assert_eq!(pac_tier_probability(5.0, 3.0, 5.0), 0.0);
    }

    #[test]
    fn pac_takes_the_minimum() {
        let config = PacConfig {
            rt_low: vec![0.6, 0.6, 3.0],
            rt_high: vec![1.0, 1.0, 5.0],
            period: 40.0,
        };
        assert_eq!(pac_probability(&config, &[Some(0.1), None, Some(4.0)]), 0.5);
        assert!((pac_probability(&config, &[Some(0.9), None, Some(4.0)]) - 0.25).abs() < 1e-12);
        assert_eq!(pac_probability(&config, &[None, None, None]), 1.0);
    }

    proptest! {
        #[test]
        fn pac_is_monotone_and_continuous(a in 0.0f64..10.0, d in 0.0f64..1.0) {
            let p1 = pac_tier_probability(a, 3.0, 5.0);
            let p2 = pac_tier_probability(a + d, 3.0, 5.0);
            prop_assert!(p2 <= p1);
            prop_assert!(p1 - p2 <= d / 2.0 + 1e-12);
            prop_assert!((0.0..=1.0).contains(&p1));
        }
    }

    #[test]
    fn tbac_threshold() {
        let t = [1.0, 1.0, 5.0];
        assert_eq!(
            tbac_decision(&t, &[Some(0.1), Some(0.2), Some(4.9)]),
            TbacDecision::AcceptAll
        );
        assert_eq!(
            tbac_decision(&t, &[None, None, Some(5.2)]),
            TbacDecision::RejectNew
        );
        assert_eq!(tbac_decision(&t, &[None, None, None]), TbacDecision::AcceptAll);
    }

    #[test]
    fn tbac_alternates_with_scripted_stats() {
        let mut policy = TbacPolicy::new(TbacConfig {
            thresholds: vec![1.0, 1.0, 5.0],
            period: 40.0,
        });
        let mut pattern = Vec::new();
        for k in 1..=6 {
            let rt = if k % 2 == 1 { 6.0 } else { 4.0 };
            policy.on_response(2, SimTime::from_secs(k as f64 * 40.0 - 1.0), rt);
            policy.on_control_tick(SimTime::from_secs(k as f64 * 40.0));
            pattern.push(policy.on_arrival(SimTime::from_secs(k as f64 * 40.0 + 1.0), 0.5));
        }
        assert_eq!(pattern, vec![false, true, false, true, false, true]);
    }

    #[test]
    fn tbac_forgets_previous_periods() {
        let mut policy = TbacPolicy::new(TbacConfig {
            thresholds: vec![5.0],
            period: 10.0,
        });
        policy.on_response(0, SimTime::from_secs(1.0), 9.0);
        policy.on_control_tick(SimTime::from_secs(10.0));
        assert_eq!(policy.decision(), TbacDecision::RejectNew);
        policy.on_control_tick(SimTime::from_secs(20.0));
        assert_eq!(policy.decision(), TbacDecision::AcceptAll);
        assert_eq!(policy.next_control_tick(), Some(SimTime::from_secs(30.0)));
    }

    #[test]
    fn pac_uses_the_coin() {
        let mut policy = PacPolicy::new(PacConfig {
            rt_low: vec![3.0],
            rt_high: vec![5.0],
            period: 10.0,
        });
        policy.on_response(0, SimTime::from_secs(1.0), 4.0);
        policy.on_control_tick(SimTime::from_secs(10.0));
        assert_eq!(policy.snapshot().p, 0.5);
        assert!(policy.on_arrival(SimTime::from_secs(11.0), 0.5));
        assert!(!policy.on_arrival(SimTime::from_secs(11.0), 0.51));
    }
}
