//! Service level agreement: per-tier response-time caps, a guaranteed admission rate and the
//! interval at which compliance is checked.
//!
//! Compliance reports are informational. No policy reads them back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::SimTime;

/// Agreement terms for a K-tier cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlaSpec {
    /// Maximum acceptable 95th percentile of the response time, per tier, in seconds.
    pub rt_limit: Vec<f64>,
    /// Minimum guaranteed session admission rate (sessions/second).
    pub lambda_min: f64,
    /// Length of a compliance observation window, in seconds.
    pub check_interval: f64,
}

impl SlaSpec {
    pub fn new(rt_limit: Vec<f64>, lambda_min: f64, check_interval: f64) -> Result<Self> {
        let sla = SlaSpec {
            rt_limit,
            lambda_min,
            check_interval,
        };
        sla.validate()?;
        Ok(sla)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rt_limit.is_empty() {
            return Err(Error::config("sla.rt_limit must list one limit per tier"));
        }
        if let Some((i, v)) = self
            .rt_limit
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::config(format!(
                "sla.rt_limit[{i}] = {v} must be a positive number of seconds"
            )));
        }
        if !(self.lambda_min.is_finite() && self.lambda_min >= 0.0) {
            return Err(Error::config("sla.lambda_min must be >= 0"));
        }
        if !(self.check_interval.is_finite() && self.check_interval > 0.0) {
            return Err(Error::config("sla.check_interval must be > 0"));
        }
        Ok(())
    }

    pub fn tiers(&self) -> usize {
        self.rt_limit.len()
    }
}

/// Measurements taken over one compliance window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMetrics {
    pub start: SimTime,
    pub end: SimTime,
    /// 95th percentile response time per tier; `None` when the tier saw no samples.
    pub rt95: Vec<Option<f64>>,
    pub lambda_in: f64,
    pub lambda_adm: f64,
    /// Total number of response samples behind `rt95`.
    pub samples: usize,
    /// Number of session arrivals in the window.
    pub arrivals: usize,
}

/// Outcome of one SLA check.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceReport {
    pub window_start: SimTime,
    pub window_end: SimTime,
    pub rt95: Vec<Option<f64>>,
    pub rt_ok: Vec<bool>,
    pub admission_ok: bool,
    pub lambda_in: f64,
    pub lambda_adm: f64,
    /// Relative slack granted to the admission-rate test.
    pub rate_tolerance: f64,
    /// The window is shorter than the check interval (end of run).
    pub partial: bool,
    /// No arrivals and no response samples: every flag holds vacuously.
    pub empty: bool,
}

impl ComplianceReport {
    pub fn rt_violated(&self) -> bool {
        self.rt_ok.iter().any(|ok| !ok)
    }

    pub fn compliant(&self) -> bool {
        !self.rt_violated() && self.admission_ok
    }
}

/// Relative tolerance on the admission-rate clause.
pub const RATE_TOLERANCE: f64 = 0.05;

/// Checks one window of measurements against the agreement.
pub fn evaluate_sla(metrics: &WindowMetrics, sla: &SlaSpec) -> ComplianceReport {
    let length = metrics.end.since(metrics.start);
    let partial = (length - sla.check_interval).abs() > 1e-9 * sla.check_interval.max(1.0);
    let empty = metrics.samples == 0 && metrics.arrivals == 0;
    let rt_ok = sla
        .rt_limit
        .iter()
        .enumerate()
        .map(|(i, limit)| match metrics.rt95.get(i).copied().flatten() {
            Some(rt) => rt <= *limit,
            None => true,
        })
        .collect();
    let required = metrics.lambda_in.min(sla.lambda_min);
    let admission_ok = empty || metrics.lambda_adm >= required * (1.0 - RATE_TOLERANCE);
    ComplianceReport {
        window_start: metrics.start,
        window_end: metrics.end,
        rt95: metrics.rt95.clone(),
        rt_ok,
        admission_ok,
        lambda_in: metrics.lambda_in,
        lambda_adm: metrics.lambda_adm,
        rate_tolerance: RATE_TOLERANCE,
        partial,
        empty,
    }
}
