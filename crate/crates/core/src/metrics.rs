//! Turns the engine's metric stream into a time series, compliance windows and a run summary.
//!
//! Reported response times are measured at the dispatcher for every finished request,
//! including the ones whose client had already given up. Controllers only ever see the
//! responses that were actually delivered.

use std::io::{self, Write};

use serde::Serialize;

use crate::engine::{MetricEvent, MetricSink, SessionCounts};
use crate::policy::{ControlMode, ControlSnapshot};
use crate::sla::{evaluate_sla, ComplianceReport, SlaSpec, WindowMetrics};
use crate::stats::{self, coefficient_of_variation, RunningStats};
use crate::types::{SessionState, SimTime};

/// One time-series sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub time: f64,
    pub lambda_in: f64,
    pub lambda_adm: f64,
    pub p: f64,
    pub lambda_star: Option<f64>,
    pub rt95: Vec<Option<f64>>,
    pub mode: ControlMode,
    /// Sessions abandoned per second over the sampling interval.
    pub abandonment_rate: f64,
}

/// A timestamped controller state change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRecord {
    pub time: f64,
    pub control: ControlSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierSummary {
    pub name: String,
    pub completions: u64,
    pub mean_rt: Option<f64>,
    pub rt95: Option<f64>,
    /// Same percentile restricted to responses that reached their client.
    pub rt95_delivered: Option<f64>,
    /// Coefficient of variation of the per-window 95th percentile.
    pub rt95_cv: Option<f64>,
    /// Fraction of full compliance windows where this tier exceeded its limit.
    pub violation_fraction: f64,
}

/// Post-warm-up aggregates of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub measured_from: f64,
    pub measured_to: f64,
    pub arrivals: u64,
    pub admitted: u64,
    pub rejected: u64,
    pub completed_sessions: u64,
    pub abandoned_sessions: u64,
    pub lambda_in: f64,
    pub lambda_adm: f64,
    /// Finished requests per second.
    pub throughput: f64,
    pub session_throughput: f64,
    pub rejection_rate: f64,
    /// Abandoned sessions over admitted sessions.
    pub abandonment_rate: f64,
    /// Time-weighted mean admission probability.
    pub mean_p: f64,
    pub compliance_windows: usize,
    /// Fraction of full windows in which some tier exceeded its limit.
    pub sla_violation_fraction: f64,
    /// Fraction of full windows failing the guaranteed-admission clause.
    pub admission_violation_fraction: f64,
    pub final_lambda_star: Option<f64>,
    pub mode_switches: u64,
    pub warnings: usize,
    pub tiers: Vec<TierSummary>,
}

#[derive(Debug, Clone, Default)]
struct Interval {
    arrivals: u64,
    admitted: u64,
    abandoned: u64,
    rt: Vec<Vec<f64>>,
}

impl Interval {
    fn new(tiers: usize) -> Self {
        Interval {
            rt: vec![Vec::new(); tiers],
            ..Default::default()
        }
    }

    fn rt95(&mut self) -> Vec<Option<f64>> {
        self.rt.iter_mut().map(|v| stats::p95(v)).collect()
    }

    fn samples(&self) -> usize {
        self.rt.iter().map(Vec::len).sum()
    }
}

/// Sink that keeps everything needed for the output files.
#[derive(Debug, Clone)]
pub struct Recorder {
    tier_names: Vec<String>,
    sla: SlaSpec,
    warmup: f64,
    series: Vec<SeriesRow>,
    compliance: Vec<ComplianceReport>,
    decisions: Vec<DecisionRecord>,
    warnings: Vec<(f64, String)>,
    sample: Interval,
    sample_start: SimTime,
    window: Interval,
    window_start: SimTime,
    control: ControlSnapshot,
    // post-warm-up accumulators
    counts: SessionCounts,
    rt_all: Vec<Vec<f64>>,
    rt_delivered: Vec<Vec<f64>>,
    rt_mean: Vec<RunningStats>,
    p_area: f64,
    p_since: SimTime,
    mode_switches: u64,
}

impl Recorder {
    pub fn new(tier_names: Vec<String>, sla: SlaSpec, warmup: f64, initial: ControlSnapshot) -> Self {
        let tiers = tier_names.len();
        Recorder {
            tier_names,
            sla,
            warmup,
            series: Vec::new(),
            compliance: Vec::new(),
            decisions: Vec::new(),
            warnings: Vec::new(),
            sample: Interval::new(tiers),
            sample_start: SimTime::ZERO,
            window: Interval::new(tiers),
            window_start: SimTime::ZERO,
            control: initial,
            counts: SessionCounts::default(),
            rt_all: vec![Vec::new(); tiers],
            rt_delivered: vec![Vec::new(); tiers],
            rt_mean: vec![RunningStats::new(); tiers],
            p_area: 0.0,
            p_since: SimTime::from_secs(warmup),
            mode_switches: 0,
        }
    }

    pub fn series(&self) -> &[SeriesRow] {
        &self.series
    }

    pub fn compliance(&self) -> &[ComplianceReport] {
        &self.compliance
    }

    pub fn decisions(&self) -> &[DecisionRecord] {
        &self.decisions
    }

    pub fn warnings(&self) -> &[(f64, String)] {
        &self.warnings
    }

    pub fn tier_names(&self) -> &[String] {
        &self.tier_names
    }

    fn measuring(&self, time: SimTime) -> bool {
        time.secs() >= self.warmup
    }

    /// Full compliance windows that start after warm-up.
    pub fn measured_windows(&self) -> impl Iterator<Item = &ComplianceReport> {
        let warmup = self.warmup;
        self.compliance
            .iter()
            .filter(move |r| !r.partial && r.window_start.secs() >= warmup)
    }

    /// First time at or after `from` that the admission probability was below `threshold`.
    pub fn first_p_below(&self, from: f64, threshold: f64) -> Option<f64> {
        let in_effect = self.decisions.iter().take_while(|d| d.time <= from).last();
        if in_effect.is_some_and(|d| d.control.p < threshold) {
            return Some(from);
        }
        self.decisions
            .iter()
            .find(|d| d.time > from && d.control.p < threshold)
            .map(|d| d.time)
    }

    fn close_window(&mut self, end: SimTime) {
        let length = end.since(self.window_start);
        let rt95 = self.window.rt95();
        let metrics = WindowMetrics {
            start: self.window_start,
            end,
            lambda_in: rate(self.window.arrivals, length),
            lambda_adm: rate(self.window.admitted, length),
            samples: self.window.samples(),
            arrivals: self.window.arrivals as usize,
            rt95,
        };
        self.compliance.push(evaluate_sla(&metrics, &self.sla));
        self.window = Interval::new(self.tier_names.len());
        self.window_start = end;
    }

    fn close_sample(&mut self, end: SimTime, control: ControlSnapshot) {
        let length = end.since(self.sample_start);
        let rt95 = self.sample.rt95();
        self.series.push(SeriesRow {
            time: end.secs(),
            lambda_in: rate(self.sample.arrivals, length),
            lambda_adm: rate(self.sample.admitted, length),
            p: control.p,
            lambda_star: control.lambda_star,
            rt95,
            mode: control.mode,
            abandonment_rate: rate(self.sample.abandoned, length),
        });
        self.sample = Interval::new(self.tier_names.len());
        self.sample_start = end;
    }

    fn accumulate_p(&mut self, until: SimTime) {
        let from = self.p_since.max(SimTime::from_secs(self.warmup));
        if until > from {
            self.p_area += self.control.p * until.since(from);
        }
        self.p_since = until.max(self.p_since);
    }

    /// Aggregates over `[warmup, end]`.
    pub fn summary(&self, end: SimTime) -> Summary {
        let mut this = self.clone();
        this.accumulate_p(end);
        let span = end.secs() - self.warmup;
        let windows: Vec<&ComplianceReport> = self.measured_windows().collect();
        let fraction = |f: &dyn Fn(&ComplianceReport) -> bool| {
            if windows.is_empty() {
                0.0
            } else {
                windows.iter().filter(|r| f(r)).count() as f64 / windows.len() as f64
            }
        };
        let c = &self.counts;
        let completions: u64 = self.rt_all.iter().map(|v| v.len() as u64).sum();
        let tiers = (0..self.tier_names.len())
            .map(|i| {
                let per_window: Vec<f64> = windows.iter().filter_map(|r| r.rt95[i]).collect();
                TierSummary {
                    name: self.tier_names[i].clone(),
                    completions: self.rt_all[i].len() as u64,
                    mean_rt: (self.rt_mean[i].count() > 0).then(|| self.rt_mean[i].mean()),
                    rt95: stats::p95(&mut self.rt_all[i].clone()),
                    rt95_delivered: stats::p95(&mut self.rt_delivered[i].clone()),
                    rt95_cv: coefficient_of_variation(&per_window),
                    violation_fraction: fraction(&|r: &ComplianceReport| !r.rt_ok[i]),
                }
            })
            .collect();
        Summary {
            measured_from: self.warmup,
            measured_to: end.secs(),
            arrivals: c.arrivals,
            admitted: c.admitted,
            rejected: c.rejected,
            completed_sessions: c.completed,
            abandoned_sessions: c.abandoned,
            lambda_in: rate(c.arrivals, span),
            lambda_adm: rate(c.admitted, span),
            throughput: rate(completions, span),
            session_throughput: rate(c.completed, span),
            rejection_rate: ratio(c.rejected, c.arrivals),
            abandonment_rate: ratio(c.abandoned, c.admitted),
            mean_p: if span > 0.0 {
                this.p_area / span
            } else {
                self.control.p
            },
            compliance_windows: windows.len(),
            sla_violation_fraction: fraction(&|r: &ComplianceReport| r.rt_violated()),
            admission_violation_fraction: fraction(&|r: &ComplianceReport| !r.admission_ok),
            final_lambda_star: self.control.lambda_star,
            mode_switches: self.mode_switches,
            warnings: self.warnings.len(),
            tiers,
        }
    }
}

fn rate(count: u64, seconds: f64) -> f64 {
    if seconds > 0.0 {
        count as f64 / seconds
    } else {
        0.0
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl MetricSink for Recorder {
    fn record(&mut self, event: &MetricEvent) {
        match event {
            MetricEvent::Arrival { time, admitted } => {
                for interval in [&mut self.sample, &mut self.window] {
                    interval.arrivals += 1;
                    interval.admitted += u64::from(*admitted);
                }
                if self.measuring(*time) {
                    self.counts.arrivals += 1;
                    if *admitted {
                        self.counts.admitted += 1;
                    } else {
                        self.counts.rejected += 1;
                    }
                }
            }
            MetricEvent::Response {
                time,
                tier,
                rt,
                delivered,
            } => {
                self.sample.rt[*tier].push(*rt);
                self.window.rt[*tier].push(*rt);
                if self.measuring(*time) {
                    self.rt_all[*tier].push(*rt);
                    self.rt_mean[*tier].push(*rt);
                    if *delivered {
                        self.rt_delivered[*tier].push(*rt);
                    }
                }
            }
            MetricEvent::SessionEnd { time, state } => {
                let abandoned = *state == SessionState::Abandoned;
                self.sample.abandoned += u64::from(abandoned);
                if self.measuring(*time) {
                    if abandoned {
                        self.counts.abandoned += 1;
                    } else {
                        self.counts.completed += 1;
                    }
                }
            }
            MetricEvent::Decision { time, control } => {
                self.accumulate_p(*time);
                if control.mode != self.control.mode && self.measuring(*time) {
                    self.mode_switches += 1;
                }
                self.control = *control;
                self.decisions.push(DecisionRecord {
                    time: time.secs(),
                    control: *control,
                });
            }
            MetricEvent::Sample { time, control } => self.close_sample(*time, *control),
            MetricEvent::SlaCheck { time, .. } => self.close_window(*time),
            MetricEvent::WarmupEnd { time } => {
                self.p_since = *time;
            }
            MetricEvent::Warning { time, message } => {
                self.warnings.push((time.secs(), message.clone()));
            }
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Time series as CSV with one RT95 column per tier.
pub fn write_series_csv<W: Write>(out: &mut W, tiers: &[String], rows: &[SeriesRow]) -> io::Result<()> {
    write!(out, "time,lambda_in,lambda_adm,p,lambda_star")?;
    for name in tiers {
        write!(out, ",rt95_{name}")?;
    }
    writeln!(out, ",mode,abandonment_rate")?;
    for r in rows {
        write!(
            out,
            "{},{},{},{},{}",
            r.time,
            r.lambda_in,
            r.lambda_adm,
            r.p,
            opt(r.lambda_star)
        )?;
        for rt in &r.rt95 {
            write!(out, ",{}", opt(*rt))?;
        }
        writeln!(out, ",{},{}", r.mode.name(), r.abandonment_rate)?;
    }
    Ok(())
}

pub fn write_compliance_csv<W: Write>(
    out: &mut W,
    tiers: &[String],
    reports: &[ComplianceReport],
) -> io::Result<()> {
    write!(out, "window_start,window_end,lambda_in,lambda_adm,admission_ok")?;
    for name in tiers {
        write!(out, ",rt95_{name},rt_ok_{name}")?;
    }
    writeln!(out, ",partial,empty")?;
    for r in reports {
        write!(
            out,
            "{},{},{},{},{}",
            r.window_start.secs(),
            r.window_end.secs(),
            r.lambda_in,
            r.lambda_adm,
            r.admission_ok
        )?;
        for (rt, ok) in r.rt95.iter().zip(&r.rt_ok) {
            write!(out, ",{},{}", opt(*rt), ok)?;
        }
        writeln!(out, ",{},{}", r.partial, r.empty)?;
    }
    Ok(())
}

pub fn write_decisions_csv<W: Write>(out: &mut W, decisions: &[DecisionRecord]) -> io::Result<()> {
    writeln!(out, "time,p,lambda_star,mode")?;
    for d in decisions {
        writeln!(
            out,
            "{},{},{},{}",
            d.time,
            d.control.p,
            opt(d.control.lambda_star),
            d.control.mode.name()
        )?;
    }
    Ok(())
}
