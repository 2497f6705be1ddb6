//! Sliding observation window over recently admitted sessions.
//!
//! The window is the last `W` admitted sessions, where
//! `W = max(1, min(floor(lambda_in * t), floor(lambda_star * T_AC)))`. Its time span runs from
//! the admission of the oldest of those sessions to now. Rates and response-time percentiles
//! are computed over that span.

use std::collections::VecDeque;

use crate::stats;
use crate::types::SimTime;

/// Number of admitted sessions the statistics are computed over.
pub fn window_size(lambda_in: f64, elapsed: f64, lambda_star: f64, control_period: f64) -> usize {
    let by_demand = floor_count(lambda_in * elapsed);
    let by_limit = floor_count(lambda_star * control_period);
    by_demand.min(by_limit).max(1)
}

fn floor_count(x: f64) -> usize {
    if x.is_nan() || x <= 0.0 {
        0
    } else if x >= usize::MAX as f64 {
        usize::MAX
    } else {
        x.floor() as usize
    }
}

/// Statistics produced by `update_stats`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats {
    pub lambda_in: f64,
    pub lambda_adm: f64,
    /// Nearest-rank 95th percentile per tier; `None` when the tier has no samples in the span.
    pub rt95: Vec<Option<f64>>,
    pub sessions: usize,
    pub span: f64,
}

impl WindowStats {
    pub fn empty(tiers: usize) -> Self {
        WindowStats {
            lambda_in: 0.0,
            lambda_adm: 0.0,
            rt95: vec![None; tiers],
            sessions: 0,
            span: 0.0,
        }
    }
}

/// Raw measures kept by the monitor.
#[derive(Debug, Clone)]
pub struct ObservationWindow {
    admissions: VecDeque<SimTime>,
    arrivals: VecDeque<SimTime>,
    samples: Vec<VecDeque<(SimTime, f64)>>,
    /// Upper bound on retained admissions.
    capacity: usize,
    /// Raw measures older than this many seconds are discarded.
    retention: f64,
    last_time: SimTime,
    dropped: u64,
}

impl ObservationWindow {
    pub fn new(tiers: usize, retention: f64) -> Self {
        ObservationWindow {
            admissions: VecDeque::new(),
            arrivals: VecDeque::new(),
            samples: vec![VecDeque::new(); tiers],
            capacity: usize::MAX,
            retention,
            last_time: SimTime::ZERO,
            dropped: 0,
        }
    }

    /// Caps the admission ring; the window rule never asks for more than this.
    pub fn set_capacity(&mut self, capacity: usize) {
        self.capacity = capacity.max(1);
        while self.admissions.len() > self.capacity {
            self.admissions.pop_front();
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn advance(&mut self, now: SimTime) -> bool {
        if now < self.last_time {
            self.dropped += 1;
            return false;
        }
        self.last_time = now;
        true
    }

    pub fn record_arrival(&mut self, now: SimTime) {
        if self.advance(now) {
            self.arrivals.push_back(now);
            self.evict(now);
        }
    }

    pub fn record_admission(&mut self, now: SimTime) {
        if self.advance(now) {
            self.admissions.push_back(now);
            if self.admissions.len() > self.capacity {
                self.admissions.pop_front();
            }
        }
    }

    pub fn record_response(&mut self, tier: usize, now: SimTime, rt: f64) {
        if tier >= self.samples.len() {
            self.dropped += 1;
            return;
        }
        if self.advance(now) {
            self.samples[tier].push_back((now, rt));
        }
    }

    /// Counts a response sample that could not be attributed (for example its client left).
    pub fn record_dropped(&mut self) {
        self.dropped += 1;
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn admitted_len(&self) -> usize {
        self.admissions.len()
    }

    /// Retained arrivals at or after `start`.
    pub fn arrivals_since(&self, start: SimTime) -> usize {
        self.arrivals.len() - self.arrivals.partition_point(|t| *t < start)
    }

    fn evict(&mut self, now: SimTime) {
        let horizon = now.secs() - self.retention;
        let old = |t: &SimTime| t.secs() < horizon;
        while self.arrivals.front().is_some_and(old) {
            self.arrivals.pop_front();
        }
        while self.admissions.front().is_some_and(old) {
            self.admissions.pop_front();
        }
        for tier in &mut self.samples {
            while tier.front().is_some_and(|(t, _)| old(t)) {
                tier.pop_front();
            }
        }
    }

    /// Rates and percentiles over the last `size` admitted sessions.
    pub fn update_stats(&mut self, now: SimTime, size: usize) -> WindowStats {
        self.evict(now);
        let tiers = self.samples.len();
        let size = size.min(self.admissions.len());
        if size == 0 {
            return WindowStats::empty(tiers);
        }
        let start = self.admissions[self.admissions.len() - size];
        let span = now.since(start);
        if span <= 0.0 {
            return WindowStats {
                sessions: size,
                ..WindowStats::empty(tiers)
            };
        }
        let arrivals = self.arrivals_since(start);
        let rt95 = self
            .samples
            .iter()
            .map(|tier| {
                let first = tier.partition_point(|(t, _)| *t < start);
                let mut values: Vec<f64> = tier.range(first..).map(|(_, rt)| *rt).collect();
                stats::p95(&mut values)
            })
            .collect();
        WindowStats {
            lambda_in: arrivals as f64 / span,
            lambda_adm: size as f64 / span,
            rt95,
            sessions: size,
            span,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: f64) -> SimTime {
        SimTime::from_secs(s)
    }

    #[test]
    fn first_admission_gives_window_of_one() {
        assert_eq!(window_size(0.0, 0.0, 10.0, 30.0), 1);
        let mut w = ObservationWindow::new(1, 1000.0);
        w.record_arrival(t(1.0));
        w.record_admission(t(1.0));
        let s = w.update_stats(t(2.0), window_size(0.0, 1.0, 10.0, 30.0));
        assert_eq!(s.sessions, 1);
    }

    #[test]
    fn size_rule_picks_the_smaller_bound() {
        // floor(5 * 30) = 150 < floor(10 * t) for large t
        assert_eq!(window_size(10.0, 1000.0, 5.0, 30.0), 150);
        assert_eq!(window_size(1.0, 10.0, 5.0, 30.0), 10);
        assert_eq!(window_size(1.0, 10.0, f64::INFINITY, 30.0), 10);
        assert_eq!(window_size(0.0, 10.0, 0.0, 30.0), 1);
    }

    #[test]
    fn rates_over_span() {
        let mut w = ObservationWindow::new(1, 1000.0);
        // 40 arrivals in [10, 20), every second one admitted
        for k in 0..40 {
            let at = t(10.0 + k as f64 * 0.25);
            w.record_arrival(at);
            if k % 2 == 0 {
                w.record_admission(at);
            }
        }
        let s = w.update_stats(t(20.0), 20);
        assert_eq!(s.sessions, 20);
        assert!((s.span - 10.0).abs() < 1e-12);
        assert!((s.lambda_adm - 2.0).abs() < 1e-12);
        assert!((s.lambda_in - 4.0).abs() < 1e-12);
    }

    #[test]
    fn percentiles_cover_only_the_span() {
        let mut w = ObservationWindow::new(2, 1000.0);
        w.record_response(0, t(1.0), 99.0);
        w.record_admission(t(5.0));
        for k in 1..=100 {
            w.record_response(0, t(5.0 + k as f64 * 0.01), k as f64);
        }
        let s = w.update_stats(t(10.0), 1);
        assert_eq!(s.rt95[0], Some(95.0));
        assert_eq!(s.rt95[1], None);
    }

    #[test]
    fn capacity_bounds_ring() {
        let mut w = ObservationWindow::new(1, 1e9);
        w.set_capacity(3);
        for k in 0..10 {
            w.record_admission(t(k as f64));
        }
        assert_eq!(w.admitted_len(), 3);
        assert_eq!(w.update_stats(t(10.0), 100).sessions, 3);
    }

    #[test]
    fn out_of_order_samples_are_counted_and_dropped() {
        let mut w = ObservationWindow::new(1, 1e9);
        w.record_arrival(t(5.0));
        w.record_response(0, t(4.0), 1.0);
        w.record_dropped();
        assert_eq!(w.dropped(), 2);
    }
}
