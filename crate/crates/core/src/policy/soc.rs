//! Self-configuring overload control.
//!
//! In normal mode the controller admits new sessions with probability `p` and, every control
//! period, turns its raw measures into one point per tier on the admitted-rate/response-time
//! curve. It only re-derives the rate limit `lambda_star` from the curve when the previous
//! limit proved wrong: the limit was reached without any tier exceeding its response-time cap
//! (limit too low), or a cap was exceeded while the limit was respected (limit too high).
//!
//! A burst of admissions well above what the limit allows for one period switches to
//! flash-crowd mode. There the statistics are refreshed on every arrival, the curve is frozen,
//! and `p` tracks the measured demand until the admitted rate falls back under the limit.

use crate::monitor::{window_size, CurveEstimate, Knot, ObservationWindow, RateVariance, WindowStats};
use crate::sla::SlaSpec;
use crate::types::SimTime;

use super::{AdmissionController, ControlMode, ControlSnapshot, PolicyKind};

#[derive(Debug, Clone, PartialEq)]
pub struct SocConfig {
    /// Length of a normal-mode control period (seconds).
    pub control_period: f64,
    /// Width of a regressogram slice on the admitted-rate axis (sessions/second).
    pub slice_width: f64,
    /// Multiplier on the admitted-rate standard deviation in the change detector.
    pub k_sigma: f64,
    pub change_detection: bool,
    /// Slices whose response-time mean has a larger relative standard error are not trusted.
    pub max_relative_se: f64,
    /// Raw measures older than this are discarded (seconds).
    pub retention: f64,
}

impl SocConfig {
    pub fn new(control_period: f64, slice_width: f64) -> Self {
        SocConfig {
            control_period,
            slice_width,
            k_sigma: 3.0,
            change_detection: true,
            max_relative_se: 0.2,
            retention: 10.0 * control_period,
        }
    }
}

/// Mutable controller state.
#[derive(Debug, Clone, PartialEq)]
pub struct SocState {
    pub mode: ControlMode,
    /// Iteration counter; advances on every tick and on every flash-crowd arrival.
    pub iteration: u64,
    pub lambda_star: f64,
    pub p: f64,
    /// Sessions admitted since `cycle_start`.
    pub admitted: u64,
    /// Start of the current control period or flash-crowd episode.
    pub cycle_start: SimTime,
    /// Arrival rate measured at the previous update (the forecast for the next one).
    pub lambda_in_prev: f64,
    pub last_stats: Option<WindowStats>,
    pub next_tick: Option<SimTime>,
}

/// Change detector: more admissions than a whole period's worth, arriving faster than the
/// limit plus `k` standard deviations.
pub fn change_detection(
    admitted: u64,
    elapsed: f64,
    lambda_star: f64,
    control_period: f64,
    sigma: f64,
    k: f64,
) -> bool {
    if elapsed <= 0.0 {
        return false;
    }
    let n = admitted as f64;
    n > lambda_star * control_period && n / elapsed > lambda_star + k * sigma
}

/// `min(1, lambda_star / forecast)`, with an idle forecast admitting everything.
pub fn admission_probability(lambda_star: f64, forecast: f64) -> f64 {
    if lambda_star <= 0.0 {
        return 0.0;
    }
    if forecast.is_nan() || forecast <= 0.0 {
        return 1.0;
    }
    (lambda_star / forecast).min(1.0)
}

/// Result of re-validating the rate limit against a closed window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateLimitUpdate {
    pub lambda_star: f64,
    pub p: f64,
    /// The limit was met or exceeded and every tier stayed under its cap.
    pub underestimated: bool,
    /// The limit was respected yet some tier exceeded its cap.
    pub overestimated: bool,
    /// Some tier cannot meet its cap even when idle.
    pub infeasible: bool,
}

/// Checks the previous limit against `stats` and, if it was wrong, inverts the curves at the
/// per-tier response-time caps. Absent percentiles count as compliant.
pub fn update_admission_probability(
    lambda_star: f64,
    stats: &WindowStats,
    curve: &CurveEstimate,
    sla: &SlaSpec,
) -> RateLimitUpdate {
    let has_samples = stats.rt95.iter().any(Option::is_some);
    let rt = |i: usize| stats.rt95.get(i).copied().flatten();
    let all_below = sla
        .rt_limit
        .iter()
        .enumerate()
        .all(|(i, limit)| rt(i).is_none_or(|r| r < *limit));
    let any_above = sla
        .rt_limit
        .iter()
        .enumerate()
        .any(|(i, limit)| rt(i).is_some_and(|r| r > *limit));
    let underestimated = has_samples && stats.lambda_adm >= lambda_star && all_below;
    let overestimated = has_samples && stats.lambda_adm <= lambda_star && any_above;

    let mut new_limit = lambda_star;
    if underestimated || overestimated {
        new_limit = curve
            .tiers
            .iter()
            .zip(&sla.rt_limit)
            .map(|(tier, limit)| tier.invert(*limit))
            .fold(f64::INFINITY, f64::min);
    }
    let infeasible = new_limit <= 0.0;
    let p = if infeasible {
        0.0
    } else {
        admission_probability(new_limit, stats.lambda_in)
    };
    RateLimitUpdate {
        lambda_star: new_limit.max(0.0),
        p,
        underestimated,
        overestimated,
        infeasible,
    }
}

/// The self-configuring controller together with its monitor.
#[derive(Debug, Clone)]
pub struct SocPolicy {
    config: SocConfig,
    sla: SlaSpec,
    state: SocState,
    window: ObservationWindow,
    curve: CurveEstimate,
    sigma: RateVariance,
    warnings: Vec<String>,
}

impl SocPolicy {
    /// Initial state: limit at the guaranteed rate, admit everything, and seed each tier's
    /// curve with its idle benchmark point.
    pub fn new(config: SocConfig, sla: SlaSpec, bench_rt: &[f64]) -> Self {
        let anchors: Vec<Option<Knot>> = bench_rt.iter().map(|&rt| Some(Knot::new(0.0, rt))).collect();
        Self::with_anchors(config, sla, &anchors)
    }

    pub fn with_anchors(config: SocConfig, sla: SlaSpec, anchors: &[Option<Knot>]) -> Self {
        let tiers = anchors.len();
        let curve = CurveEstimate::new(config.slice_width, config.max_relative_se, anchors);
        let window = ObservationWindow::new(tiers, config.retention);
        let state = SocState {
            mode: ControlMode::Normal,
            iteration: 0,
            lambda_star: sla.lambda_min,
            p: 1.0,
            admitted: 0,
            cycle_start: SimTime::ZERO,
            lambda_in_prev: sla.lambda_min,
            last_stats: None,
            next_tick: Some(SimTime::from_secs(config.control_period)),
        };
        let mut policy = SocPolicy {
            config,
            sla,
            state,
            window,
            curve,
            sigma: RateVariance::new(),
            warnings: Vec::new(),
        };
        policy.resize_window();
        policy
    }

    pub fn state(&self) -> &SocState {
        &self.state
    }

    pub fn config(&self) -> &SocConfig {
        &self.config
    }

    pub fn curve(&self) -> &CurveEstimate {
        &self.curve
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.sigma()
    }

    pub fn dropped_samples(&self) -> u64 {
        self.window.dropped()
    }

    fn resize_window(&mut self) {
        let cap = self.state.lambda_star * self.config.control_period;
        let cap = if cap.is_finite() {
            (cap.floor() as usize).max(1)
        } else {
            usize::MAX
        };
        self.window.set_capacity(cap);
    }

    fn current_window(&self, now: SimTime) -> usize {
        window_size(
            self.state.lambda_in_prev,
            now.since(self.state.cycle_start),
            self.state.lambda_star,
            self.config.control_period,
        )
    }

    fn admit(&mut self, now: SimTime, coin: f64) -> bool {
        let admit = coin <= self.state.p;
        if admit {
            self.state.admitted += 1;
            self.window.record_admission(now);
        }
        admit
    }

    fn enter_flash_crowd(&mut self, now: SimTime) {
        self.state.mode = ControlMode::FlashCrowd;
        self.state.cycle_start = now;
        self.state.admitted = 0;
        self.state.next_tick = None;
    }

    fn enter_normal(&mut self, now: SimTime) {
        self.state.mode = ControlMode::Normal;
        self.state.cycle_start = now;
        self.state.admitted = 0;
        self.state.next_tick = Some(now + self.config.control_period);
    }

    fn normal_arrival(&mut self, now: SimTime, coin: f64) -> bool {
        self.window.record_arrival(now);
        let admitted = self.admit(now, coin);
        if self.config.change_detection
            && change_detection(
                self.state.admitted,
                now.since(self.state.cycle_start),
                self.state.lambda_star,
                self.config.control_period,
                self.sigma.sigma(),
                self.config.k_sigma,
            )
        {
            self.enter_flash_crowd(now);
        }
        admitted
    }

    fn flash_crowd_arrival(&mut self, now: SimTime, coin: f64) -> bool {
        self.window.record_arrival(now);
        let size = self.current_window(now);
        let stats = self.window.update_stats(now, size);
        self.state.iteration += 1;
        if stats.span > 0.0 {
            // the curve stays frozen: only p follows the demand
            self.state.lambda_in_prev = stats.lambda_in;
            self.state.p = admission_probability(self.state.lambda_star, stats.lambda_in);
        }
        self.state.last_stats = Some(stats);
        let admitted = self.admit(now, coin);
        let elapsed = now.since(self.state.cycle_start);
        if elapsed > 0.0 {
            let instant_rate = self.state.admitted as f64 / elapsed;
            if instant_rate < self.state.lambda_star {
                self.enter_normal(now);
            }
        }
        admitted
    }

    fn control_tick(&mut self, now: SimTime) {
        let size = self.current_window(now);
        let mut stats = self.window.update_stats(now, size);
        if stats.sessions == 0 {
            // nothing admitted lately: estimate demand from arrivals alone
            let elapsed = now.since(self.state.cycle_start);
            stats.lambda_in = if elapsed > 0.0 {
                self.window.arrivals_since(self.state.cycle_start) as f64 / elapsed
            } else {
                0.0
            };
        }

        if stats.span > 0.0 {
            for (tier, rt) in stats.rt95.iter().enumerate() {
                if let Some(rt) = rt {
                    self.curve.tiers[tier].insert(stats.lambda_adm, *rt);
                }
            }
            self.sigma
                .observe(stats.lambda_in, stats.lambda_adm, self.state.lambda_star);
        }

        let update = update_admission_probability(self.state.lambda_star, &stats, &self.curve, &self.sla);
        if update.infeasible && self.state.lambda_star > 0.0 {
            self.warnings.push(format!(
                "t={:.3}: response-time target unreachable even at zero load; admitting nothing",
                now.secs()
            ));
        }
        self.state.lambda_star = update.lambda_star;
        self.state.p = update.p;
        self.state.lambda_in_prev = stats.lambda_in;
        self.state.last_stats = Some(stats);
        self.state.iteration += 1;
        self.enter_normal(now);
        self.resize_window();
    }
}

impl AdmissionController for SocPolicy {
    fn kind(&self) -> PolicyKind {
        if self.config.change_detection {
            PolicyKind::Soc
        } else {
            PolicyKind::SocBase
        }
    }

    fn on_arrival(&mut self, now: SimTime, coin: f64) -> bool {
        match self.state.mode {
            ControlMode::Normal => self.normal_arrival(now, coin),
            ControlMode::FlashCrowd => self.flash_crowd_arrival(now, coin),
        }
    }

    fn on_response(&mut self, tier: usize, now: SimTime, rt: f64) {
        self.window.record_response(tier, now, rt);
    }

    fn on_dropped_response(&mut self) {
        self.window.record_dropped();
    }

    fn on_control_tick(&mut self, now: SimTime) {
        if self.state.mode == ControlMode::Normal {
            self.control_tick(now);
        }
    }

    fn next_control_tick(&self) -> Option<SimTime> {
        self.state.next_tick
    }

    fn snapshot(&self) -> ControlSnapshot {
        ControlSnapshot {
            p: self.state.p,
            lambda_star: Some(self.state.lambda_star),
            mode: self.state.mode,
        }
    }

    fn curves(&self) -> Option<Vec<Vec<Knot>>> {
        Some(self.curve.snapshot())
    }

    fn take_warnings(&mut self) -> Vec<String> {
        std::mem::take(&mut self.warnings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sla() -> SlaSpec {
        SlaSpec::new(vec![1.0, 1.0, 5.0], 1.0, 40.0).unwrap()
    }

    fn stats(lambda_in: f64, lambda_adm: f64, rt95: Vec<Option<f64>>) -> WindowStats {
        WindowStats {
            lambda_in,
            lambda_adm,
            rt95,
            sessions: 100,
            span: 40.0,
        }
    }

    fn flat_curve(limits_at: [f64; 3]) -> CurveEstimate {
        // each tier: anchor (0, rt0) and a reliable slice chosen so the cap is crossed at limits_at[i]
        let mut c = CurveEstimate::new(1.0, 0.2, &[None, None, None]);
        for (i, tier) in c.tiers.iter_mut().enumerate() {
            let cap = sla().rt_limit[i];
            let l = limits_at[i];
            for (lambda, rt) in [(0.5 * l, 0.5 * cap), (0.5 * l, 0.5 * cap), (l, cap), (l, cap)] {
                tier.insert(lambda, rt);
            }
        }
        c
    }

    #[test]
    fn change_detection_truth_table() {
        assert!(!change_detection(0, 10.0, 10.0, 30.0, 2.0, 3.0));
        assert!(change_detection(400, 10.0, 10.0, 30.0, 2.0, 3.0));
        assert!(!change_detection(400, 50.0, 10.0, 30.0, 2.0, 3.0));
        assert!(!change_detection(299, 1.0, 10.0, 30.0, 0.0, 3.0));
        assert!(!change_detection(400, 0.0, 10.0, 30.0, 2.0, 3.0));
    }

    #[test]
    fn probability_formula() {
        assert_eq!(admission_probability(10.0, 20.0), 0.5);
        assert_eq!(admission_probability(10.0, 5.0), 1.0);
        assert_eq!(admission_probability(10.0, 0.0), 1.0);
        assert_eq!(admission_probability(f64::INFINITY, 50.0), 1.0);
        assert_eq!(admission_probability(0.0, 50.0), 0.0);
    }

    #[test]
    fn p_is_non_increasing_in_forecast() {
        let mut last = 1.0;
        for k in 1..200 {
            let p = admission_probability(7.0, k as f64 * 0.1);
            assert!(p <= last);
            last = p;
        }
    }

    #[test]
    fn no_error_keeps_the_limit() {
        let curve = flat_curve([40.0, 40.0, 12.0]);
        // admitted below the limit and within every cap
        let u = update_admission_probability(
            10.0,
            &stats(20.0, 8.0, vec![Some(0.1), Some(0.1), Some(4.0)]),
            &curve,
            &sla(),
        );
        assert!(!u.underestimated && !u.overestimated);
        assert_eq!(u.lambda_star, 10.0);
        assert_eq!(u.p, 0.5);
    }

    #[test]
    fn underestimate_rederives_from_curve() {
        let curve = flat_curve([40.0, 40.0, 12.0]);
        let u = update_admission_probability(
            10.0,
            &stats(20.0, 12.0, vec![Some(0.1), Some(0.1), Some(4.0)]),
            &curve,
            &sla(),
        );
        assert!(u.underestimated);
        assert!((u.lambda_star - 12.0).abs() < 1e-9);
        assert!((u.p - 0.6).abs() < 1e-9);
    }

    #[test]
    fn overestimate_detected() {
        let curve = flat_curve([40.0, 40.0, 12.0]);
        let u = update_admission_probability(
            10.0,
            &stats(20.0, 8.0, vec![Some(0.1), Some(0.1), Some(6.0)]),
            &curve,
            &sla(),
        );
        assert!(u.overestimated && !u.underestimated);
        assert!((u.lambda_star - 12.0).abs() < 1e-9);
    }

    #[test]
    fn limit_is_minimum_over_tiers() {
        let mut curve = flat_curve([40.0, 40.0, 12.0]);
        // the first tier has no knowledge at all -> +inf
        curve.tiers[0] = crate::monitor::TierCurve::new(1.0, 0.2, None);
        let u = update_admission_probability(
            10.0,
            &stats(20.0, 12.0, vec![None, Some(0.1), Some(4.0)]),
            &curve,
            &sla(),
        );
        assert!((u.lambda_star - 12.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_target_shuts_admission() {
        let mut curve = CurveEstimate::new(
            1.0,
            0.2,
            &[
                Some(Knot::new(0.0, 0.1)),
                Some(Knot::new(0.0, 0.1)),
                Some(Knot::new(0.0, 6.0)),
            ],
        );
        curve.tiers[2].insert(1.0, 7.0);
        let u =
            update_admission_probability(1.0, &stats(2.0, 1.0, vec![None, None, Some(7.0)]), &curve, &sla());
        assert!(u.infeasible);
        assert_eq!(u.lambda_star, 0.0);
        assert_eq!(u.p, 0.0);
    }

    #[test]
    fn initial_state() {
        let policy = SocPolicy::new(SocConfig::new(40.0, 0.1), sla(), &[0.003, 0.03, 2.996]);
        assert_eq!(policy.state().p, 1.0);
        assert_eq!(policy.state().lambda_star, 1.0);
        assert_eq!(policy.state().mode, ControlMode::Normal);
        assert_eq!(policy.curve().tiers[2].anchor(), Some(Knot::new(0.0, 2.996)));
        assert_eq!(policy.next_control_tick(), Some(SimTime::from_secs(40.0)));
    }

    #[test]
    fn admission_follows_the_coin() {
        let mut policy = SocPolicy::new(SocConfig::new(40.0, 0.1), sla(), &[0.003, 0.03, 2.996]);
        policy.state.p = 0.5;
        let coins = [0.1, 0.7, 0.5, 0.9, 0.2];
        let decisions: Vec<bool> = coins
            .iter()
            .enumerate()
            .map(|(i, &c)| policy.on_arrival(SimTime::from_secs(i as f64), c))
            .collect();
        assert_eq!(decisions, vec![true, false, true, false, true]);
        policy.state.p = 1.0;
        assert!(policy.on_arrival(SimTime::from_secs(10.0), 1.0));
    }

    #[test]
    fn burst_enters_flash_crowd_and_recovers() {
        let mut config = SocConfig::new(10.0, 0.1);
        config.k_sigma = 0.0;
        let mut policy = SocPolicy::new(config, sla(), &[0.003, 0.03, 2.996]);
        policy.state.lambda_star = 2.0;
        policy.resize_window();
        // 20 sessions/second, everything admitted at p = 1
        let mut t = 0.0;
        while policy.state().mode == ControlMode::Normal {
            t += 0.05;
            policy.on_arrival(SimTime::from_secs(t), 0.5);
        }
        // 21 admissions > 2 * 10 within ~1 s
        assert!(t < 1.2, "entered at {t}");
        assert_eq!(policy.next_control_tick(), None);
        // next arrivals: p collapses towards 2/20
        t += 0.05;
        policy.on_arrival(SimTime::from_secs(t), 0.99);
        assert!(policy.state().p < 0.5, "p = {}", policy.state().p);
        // a rejected arrival leaves the instant rate under the limit -> back to normal
        assert_eq!(policy.state().mode, ControlMode::Normal);
        assert!(policy.next_control_tick().is_some());
    }

    #[test]
    fn base_variant_never_switches_mode() {
        let mut config = SocConfig::new(10.0, 0.1);
        config.change_detection = false;
        let mut policy = SocPolicy::new(config, sla(), &[0.003, 0.03, 2.996]);
        policy.state.lambda_star = 2.0;
        for k in 0..500 {
            policy.on_arrival(SimTime::from_secs(k as f64 * 0.01), 0.5);
        }
        assert_eq!(policy.state().mode, ControlMode::Normal);
        assert_eq!(policy.kind(), PolicyKind::SocBase);
    }

    #[test]
    fn tick_refreshes_p_from_measured_demand() {
        let mut policy = SocPolicy::new(SocConfig::new(40.0, 0.1), sla(), &[0.003, 0.03, 2.996]);
        policy.state.lambda_star = 12.0;
        policy.state.lambda_in_prev = 20.0;
        policy.state.p = 0.5;
        policy.resize_window();
        // 20 arrivals/s for 40 s, every other one admitted, db response 4 s
        for k in 0..800 {
            let at = SimTime::from_secs(k as f64 * 0.05);
            policy.on_arrival(at, if k % 2 == 0 { 0.25 } else { 0.75 });
            policy.on_response(2, at, 4.0);
        }
        policy.on_control_tick(SimTime::from_secs(40.0));
        let s = policy.state();
        assert_eq!(s.iteration, 1);
        // 10 admitted/s against a limit of 12, all caps met: no error
        assert!((s.lambda_star - 12.0).abs() < 1e-9, "no error -> unchanged");
        assert!((s.p - 0.6).abs() < 0.01, "p = {}", s.p);
        assert_eq!(s.admitted, 0);
        assert_eq!(s.cycle_start, SimTime::from_secs(40.0));
        assert_eq!(policy.next_control_tick(), Some(SimTime::from_secs(80.0)));
    }
}
